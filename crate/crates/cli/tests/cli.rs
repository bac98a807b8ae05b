use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use pwmf::metrics::{bench_run, BenchCase, Method};
use pwmf::noise::NoiseSpec;
use pwmf::{write_pgm, GrayImage};

fn pwmf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pwmf"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = pwmf(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fixture(dir: &Path) -> String {
    let img = GrayImage::from_fn(40, 32, |x, y| {
        (90.0 + 70.0 * ((x as f64) * 0.35).sin() * ((y as f64) * 0.25).cos()).round()
    })
    .unwrap();
    let path = dir.join("clean.pgm");
    write_pgm(&path, &img).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn psnr_of_identical_images_is_inf() {
    let dir = tempfile::tempdir().unwrap();
    let a = fixture(dir.path());
    assert_eq!(ok(&["psnr", &a, &a]).trim(), "inf");
}

#[test]
fn noise_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let clean = fixture(dir.path());
    let a = dir.path().join("a.pgm");
    let b = dir.path().join("b.pgm");
    let c = dir.path().join("c.pgm");
    for out in [&a, &b] {
        ok(&[
            "noise",
            "--kind",
            "impulse",
            "--p",
            "0.2",
            "--seed",
            "7",
            &clean,
            out.to_str().unwrap(),
        ]);
    }
    ok(&[
        "noise",
        "--kind",
        "impulse",
        "--p",
        "0.2",
        "--seed",
        "8",
        &clean,
        c.to_str().unwrap(),
    ]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
}

#[test]
fn thread_count_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let clean = fixture(dir.path());
    let noisy = dir.path().join("noisy.pgm");
    let noisy = noisy.to_str().unwrap();
    ok(&[
        "noise", "--kind", "mixed", "--sigma", "10", "--p", "0.2", "--seed", "3", &clean, noisy,
    ]);
    for method in ["pwmf", "trif", "nlm"] {
        let mut outputs = Vec::new();
        for threads in ["1", "8"] {
            let out = dir.path().join(format!("{method}{threads}.pgm"));
            ok(&[
                "--threads",
                threads,
                "denoise",
                "--method",
                method,
                "--auto",
                "10,0.2,mixed",
                noisy,
                out.to_str().unwrap(),
            ]);
            outputs.push(fs::read(out).unwrap());
        }
        assert_eq!(outputs[0], outputs[1], "{method}");
    }
}

#[test]
fn denoise_agrees_with_bench() {
    let dir = tempfile::tempdir().unwrap();
    let clean = fixture(dir.path());
    let noisy = dir.path().join("noisy.pgm");
    let restored = dir.path().join("restored.pgm");
    let (noisy, restored) = (noisy.to_str().unwrap(), restored.to_str().unwrap());
    ok(&[
        "noise", "--kind", "impulse", "--p", "0.2", "--seed", "5", &clean, noisy,
    ]);
    ok(&[
        "denoise",
        "--method",
        "pwmf",
        "--auto",
        "0,0.2,impulse",
        noisy,
        restored,
    ]);
    let cli_db: f64 = ok(&["psnr", restored, &clean]).trim().parse().unwrap();

    let case = BenchCase::auto(&clean, NoiseSpec::impulse(0.2, 5), Method::Pwmf).unwrap();
    let bench_db = bench_run(&[case])[0].psnr().unwrap();
    // The CLI path quantizes the noisy and restored images to 8 bits.
    assert!((cli_db - bench_db).abs() < 0.1, "{cli_db} vs {bench_db}");
}

#[test]
fn explain_prints_schedule() {
    let text = ok(&[
        "denoise",
        "--method",
        "pwmf",
        "--auto",
        "20,0.3,mixed",
        "--explain",
    ]);
    assert!(text.contains("sigma_M         17"), "{text}");
    assert!(text.contains("search D        11"), "{text}");
    assert!(text.contains("sigma_S         inf"), "{text}");
    let text = ok(&[
        "denoise",
        "--method",
        "trif",
        "--auto",
        "20,0.2,mixed",
        "--explain",
    ]);
    assert!(text.contains("sigma_R         60"), "{text}");
}

#[test]
fn usage_and_io_exit_codes() {
    assert_eq!(pwmf(&["bogus"]).status.code(), Some(1));
    assert_eq!(
        pwmf(&["noise", "--kind", "impulse", "--nope", "a", "b"])
            .status
            .code(),
        Some(1)
    );
    let usage = pwmf(&["denoise"]);
    assert_eq!(usage.status.code(), Some(1));
    assert!(!usage.stderr.is_empty());
    assert_eq!(
        pwmf(&["psnr", "/no/such/a.pgm", "/no/such/b.pgm"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(pwmf(&["--help"]).status.code(), Some(0));
}

#[test]
fn ds_bench_and_lab_commands() {
    let dir = tempfile::tempdir().unwrap();
    let clean = fixture(dir.path());
    let csv = dir.path().join("ds.csv");
    let map = dir.path().join("ds.pgm");
    let text = ok(&[
        "ds",
        "--sigma",
        "10",
        "--d",
        "5",
        "--D",
        "5",
        "--csv",
        csv.to_str().unwrap(),
        "--map",
        map.to_str().unwrap(),
        &clean,
    ]);
    assert!(text.starts_with("DS="), "{text}");
    assert_eq!(
        fs::read_to_string(&csv).unwrap().lines().count(),
        40 * 32 + 1
    );
    assert!(map.exists());

    let manifest = dir.path().join("cases.txt");
    fs::write(
        &manifest,
        "image=clean.pgm method=pwmf kind=impulse p=0.2 seed=1\nimage=gone.pgm method=trif kind=impulse p=0.2\n",
    )
    .unwrap();
    let out = pwmf(&["bench", manifest.to_str().unwrap()]);
    assert!(out.status.success());
    let table = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "image,method,sigma,p,seed,psnr_db,seconds");
    assert_eq!(lines.len(), 3);
    assert!(lines[2].contains(",error,"));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gone.pgm"));

    let rate = ok(&["lab", "rate", "--n", "100,1000", "--trials", "100"]);
    assert!(rate.starts_with("n,mean_error,std_error\n100,"), "{rate}");
    assert!(rate.contains("# slope="));
    let clt = ok(&[
        "lab",
        "clt",
        "--n",
        "1000",
        "--trials",
        "200",
        "--weights",
        "patch",
        "--l",
        "4",
    ]);
    assert!(clt.contains("ks="), "{clt}");
    let nlm = ok(&[
        "lab",
        "nlm-rate",
        "--replication",
        "1,2",
        "--trials",
        "2",
        "--d",
        "3",
        &clean,
    ]);
    assert!(nlm.starts_with("n,mean_error,std_error\n1,"), "{nlm}");
}
