//! End-to-end checks of the `abl` binary: run, resume, post, exit codes,
//! and determinism across thread-pool sizes.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_abl");

fn tiny_config(out_dir: &Path) -> String {
    format!(
        r#"case = "gabls1"
seed = 11

[grid]
nx = 8
ny = 8
nz = 8

[time]
duration_hours = 0.016666666666666666

[output]
dir = "{}"
timeseries_interval = 10.0
profile_interval = 30.0
checkpoint_interval = 30.0
stats_start_hours = 0.0
stats_end_hours = 0.016666666666666666
"#,
        out_dir.display()
    )
}

fn abl(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("spawn abl")
}

fn latest_checkpoint(dir: &Path) -> PathBuf {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| {
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            name.starts_with("checkpoint_") && name.ends_with(".bin")
        })
        .collect();
    paths.sort();
    paths.pop().expect("no checkpoint written")
}

#[test]
fn run_post_and_resume_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg_path = dir.path().join("cfg.toml");
    fs::write(&cfg_path, tiny_config(&out)).unwrap();

    let run = abl(&["run", cfg_path.to_str().unwrap()]);
    assert!(
        run.status.success(),
        "run failed: {}",
        String::from_utf8_lossy(&run.stderr)
    );
    for name in ["timeseries.csv", "profiles.csv", "bulk.json", "spectra_z100.csv"] {
        assert!(out.join(name).exists(), "missing {name}");
    }

    // post of the final checkpoint regenerates bulk.json byte-identically.
    let bulk_from_run = fs::read(out.join("bulk.json")).unwrap();
    let profiles_from_run = fs::read(out.join("profiles.csv")).unwrap();
    let chk = latest_checkpoint(&out);
    let post = abl(&["post", chk.to_str().unwrap()]);
    assert!(
        post.status.success(),
        "post failed: {}",
        String::from_utf8_lossy(&post.stderr)
    );
    assert_eq!(bulk_from_run, fs::read(out.join("bulk.json")).unwrap());
    assert_eq!(profiles_from_run, fs::read(out.join("profiles.csv")).unwrap());

    // Narrowed post writes spectra at the requested height only.
    let extra = abl(&["post", chk.to_str().unwrap(), "--spectra", "z=150"]);
    assert!(extra.status.success());
    assert!(out.join("spectra_z150.csv").exists());

    // A resume of the finished run reloads the final checkpoint and exits
    // cleanly without stepping further.
    let resume = abl(&["run", cfg_path.to_str().unwrap(), "--resume"]);
    assert!(
        resume.status.success(),
        "resume failed: {}",
        String::from_utf8_lossy(&resume.stderr)
    );
    let stdout = String::from_utf8_lossy(&resume.stdout);
    assert!(stdout.contains("resuming from"), "stdout: {stdout}");
}

#[test]
fn a_bad_config_exits_with_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.toml");
    let text = tiny_config(&dir.path().join("out")).replace("nx = 8", "nx = 0");
    fs::write(&cfg_path, text).unwrap();

    let run = abl(&["run", cfg_path.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&run.stderr);
    assert!(stderr.contains("grid"), "stderr: {stderr}");
}

#[test]
fn a_corrupt_checkpoint_exits_with_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let fake = dir.path().join("checkpoint_0000000001.bin");
    fs::write(&fake, b"not a checkpoint at all").unwrap();

    let post = abl(&["post", fake.to_str().unwrap()]);
    assert_eq!(post.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&post.stderr);
    assert!(stderr.contains("magic"), "stderr: {stderr}");
}

#[test]
fn the_trajectory_does_not_depend_on_the_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.toml");
    fs::write(&cfg_path, tiny_config(&dir.path().join("ignored"))).unwrap();

    let out1 = dir.path().join("one");
    let out4 = dir.path().join("four");
    for (threads, out) in [("1", &out1), ("4", &out4)] {
        let run = Command::new(BIN)
            .args(["run", cfg_path.to_str().unwrap(), "--threads", threads])
            .env("ABL_OUTPUT_DIR", out)
            .output()
            .expect("spawn abl");
        assert!(
            run.status.success(),
            "run --threads {threads} failed: {}",
            String::from_utf8_lossy(&run.stderr)
        );
    }

    let ts1 = fs::read(out1.join("timeseries.csv")).unwrap();
    let ts4 = fs::read(out4.join("timeseries.csv")).unwrap();
    assert_eq!(ts1, ts4, "timeseries rows differ between thread counts");
    assert_eq!(
        fs::read(out1.join("bulk.json")).unwrap(),
        fs::read(out4.join("bulk.json")).unwrap()
    );

    let a = abl_core::checkpoint::load(&latest_checkpoint(&out1)).unwrap();
    let b = abl_core::checkpoint::load(&latest_checkpoint(&out4)).unwrap();
    assert_eq!(a.state.step, b.state.step);
    assert_eq!(a.state.t.to_bits(), b.state.t.to_bits());
    for (x, y) in [
        (&a.state.u, &b.state.u),
        (&a.state.v, &b.state.v),
        (&a.state.w, &b.state.w),
        (&a.state.theta, &b.state.theta),
        (&a.state.e, &b.state.e),
    ] {
        assert!(
            x.data
                .iter()
                .zip(&y.data)
                .all(|(p, q)| p.to_bits() == q.to_bits()),
            "fields differ between thread counts"
        );
    }
}
