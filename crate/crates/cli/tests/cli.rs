use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dactd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dactd"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const TINY: &str = r#"
[env]
kind = "coupled_line"
agents = 3

[graph]
kind = "line"

[channel]
t1 = 1
drop_prob = 0.25

[run]
algorithms = ["dac_td", "independent_ac", "khop_sac:1"]
episodes = 12
steps_per_episode = 10
seeds = [3]
"#;

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("cfg.toml");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            out.extend(files(&p));
        } else {
            out.push((p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()));
        }
    }
    out.sort();
    out
}

#[test]
fn dry_run_prints_the_resolved_bundled_config() {
    let o = dactd(&["run", "--dry-run"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("dac_td delay K = 4"), "{text}");
    assert!(text.contains("4 algorithms x 5 seeds"), "{text}");
}

#[test]
fn same_seed_gives_identical_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for out in [&a, &b] {
        let o = dactd(&["run", "--trace", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (fa, fb) = (files(&a), files(&b));
    let names: Vec<&str> = fa.iter().map(|(n, _)| n.as_str()).collect();
    for want in ["summary.csv", "dac_td_seed3.csv", "khop_sac_1_seed3.csv", "dac_td_seed3_channel.csv", "dac_td_seed3_agent1_actor.txt"] {
        assert!(names.contains(&want), "missing {want} in {names:?}");
    }
    assert_eq!(fa, fb);

    let metrics = String::from_utf8(fa.iter().find(|(n, _)| n == "dac_td_seed3.csv").unwrap().1.clone()).unwrap();
    assert_eq!(metrics.lines().next().unwrap(), "episode,team_return,return_1,return_2,return_3,complete");
    assert_eq!(metrics.lines().count(), 13);
}

#[test]
fn seed_flag_changes_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let run = |seed: &str, dir: &str| {
        let out = tmp.path().join(dir);
        let o = dactd(&["run", "--config", &cfg, "--seed", seed, "--out", out.to_str().unwrap()]);
        assert!(o.status.success());
        fs::read_to_string(out.join(format!("dac_td_seed{seed}.csv"))).unwrap()
    };
    assert_ne!(run("1", "s1"), run("2", "s2"));
}

#[test]
fn oracle_writes_exact_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let out = tmp.path().join("oracle");
    let o = dactd(&["oracle", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let states = fs::read_to_string(out.join("oracle_states.csv")).unwrap();
    assert_eq!(states.lines().count(), 1 + 8);
    let d: f64 = states
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap())
        .sum();
    assert!((d - 1.0).abs() < 1e-12);
    assert!(out.join("oracle_gradient.csv").exists());
    assert!(out.join("oracle_eigenvalues.csv").exists());
}

#[test]
fn suites_pass_with_exit_zero() {
    let o = dactd(&["verify", "acyclic"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).lines().all(|l| l.starts_with("PASS")));
    let o = dactd(&["grad-check", "--draws", "20"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
}

#[test]
fn invalid_input_exits_one() {
    assert_eq!(dactd(&["verify", "nonsense"]).status.code(), Some(1));

    let tmp = tempfile::tempdir().unwrap();
    let cyclic = write_config(tmp.path(), "[graph]\nkind = \"complete\"\n[protocol]\nkind = \"alg2\"\n");
    let o = dactd(&["run", "--dry-run", "--config", &cyclic]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("acyclic"));

    let typo = write_config(tmp.path(), "[run]\nepisode = 3\n");
    assert_eq!(dactd(&["run", "--dry-run", "--config", &typo]).status.code(), Some(1));

    assert_eq!(dactd(&["run", "--config", "/nonexistent.toml"]).status.code(), Some(1));
}
