use std::io::{BufRead, BufReader};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use mindcube::diffusion::LatentSequence;

const BIN: &str = env!("CARGO_BIN_EXE_mindcube");

fn mindcube(args: &[&str]) -> std::process::Output {
    Command::new(BIN).args(args).env("RUST_LOG", "warn").output().unwrap()
}

#[test]
fn selftest_passes() {
    let out = mindcube(&["selftest"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{stdout}");
    assert!(stdout.lines().count() >= 5 && stdout.lines().all(|l| l.starts_with("PASS")), "{stdout}");
}

#[test]
fn usage_errors_exit_nonzero() {
    let out = mindcube(&["run", "--scenario", "juggling"]);
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());
    assert!(!mindcube(&["frobnicate"]).status.success());
    assert!(!mindcube(&["render", "/nonexistent/file.mclz"]).status.success());
}

#[test]
fn bad_config_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.conf");
    std::fs::write(&cfg, "diffusion.steps = lots\n").unwrap();
    let out = mindcube(&["run", "--config", cfg.to_str().unwrap(), "--headless", "--duration", "1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("diffusion.steps"));
}

#[test]
fn render_writes_wav_of_expected_duration() {
    let dir = tempfile::tempdir().unwrap();
    let latents = dir.path().join("x.mclz");
    LatentSequence::new((0..16).map(|i| [i as f32 * 0.1, 0.0, 0.0, 0.0]).collect()).unwrap().save(&latents).unwrap();
    let out = mindcube(&["render", latents.to_str().unwrap(), "--hop", "512"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let reader = hound::WavReader::open(dir.path().join("x.wav")).unwrap();
    assert_eq!(reader.duration(), 16 * 512);
    assert_eq!(reader.spec().channels, 2);
    assert_eq!(reader.spec().sample_rate, 44_100);
}

#[test]
fn replay_matches_record_trace() {
    let dir = tempfile::tempdir().unwrap();
    let path = |n: &str| dir.path().join(n).to_str().unwrap().to_string();
    let rec = mindcube(&[
        "record",
        &path("log"),
        "--scenario",
        "tilt-sweep",
        "--frames",
        "200",
        "--fast",
        "--trace",
        &path("t0"),
    ]);
    assert!(rec.status.success(), "{}", String::from_utf8_lossy(&rec.stderr));
    let rep = mindcube(&["replay", &path("log")]);
    assert!(rep.status.success());
    assert_eq!(rep.stdout, std::fs::read(path("t0")).unwrap());
    // 200 frames: 33 bytes + overhead + delimiter + 8-byte stamp each.
    assert_eq!(std::fs::metadata(path("log")).unwrap().len(), 200 * (8 + 35));
}

#[cfg(unix)]
#[test]
fn run_prints_ports_and_exits_zero_on_sigint() {
    let mut child = Command::new(BIN)
        .args(["run", "--scenario", "idle", "--seed", "1", "--headless", "--tcp-port", "0"])
        .env("RUST_LOG", "warn")
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stdout.take().unwrap()).lines();
    let first = lines.next().unwrap().unwrap();
    assert!(first.starts_with("control tcp: 127.0.0.1:"), "{first}");
    let port: u16 = first.rsplit(':').next().unwrap().parse().unwrap();
    assert_ne!(port, 0);
    let stream = std::net::TcpStream::connect(("127.0.0.1", port)).unwrap();
    stream.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    let csv = BufReader::new(stream).lines().next().unwrap().unwrap();
    assert_eq!(csv.split(',').count(), 12);

    let killed = Command::new("kill").args(["-INT", &child.id().to_string()]).status().unwrap();
    assert!(killed.success());
    let deadline = Instant::now() + Duration::from_secs(10);
    let status = loop {
        if let Some(s) = child.try_wait().unwrap() {
            break s;
        }
        assert!(Instant::now() < deadline, "did not exit after SIGINT");
        std::thread::sleep(Duration::from_millis(20));
    };
    assert!(status.success(), "{status:?}");
}
