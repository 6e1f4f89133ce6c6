use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

const SMALL: [&str; 8] = [
    "--n-policies",
    "6",
    "--n-requests",
    "20",
    "--n-direct-queries",
    "6",
    "--seed",
    "11",
];

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_streamgate"));
    c.env_remove("STREAMGATE_CONFIG")
        .env_remove("STREAMGATE_ENDPOINT")
        .env("RUST_LOG", "error");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawning streamgate")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/data")
        .join(name)
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn gen_writes_the_workload_layout() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("w");
    let mut args = vec!["gen", "--out", out.to_str().unwrap()];
    args.extend(SMALL);
    ok(&args);
    let count = |d: &str, ext: &str| {
        fs::read_dir(out.join(d))
            .unwrap()
            .filter(|e| {
                e.as_ref()
                    .unwrap()
                    .path()
                    .extension()
                    .is_some_and(|x| x == ext)
            })
            .count()
    };
    assert_eq!(count("policies", "xml"), 6);
    assert_eq!(count("queries", "sql"), 6);
    assert_eq!(count("requests", "xml"), 20);
    let conf = fs::read_to_string(out.join("workload.conf")).unwrap();
    assert!(conf.contains("n_policies = 6"), "{conf}");
    assert!(conf.contains("seed = 11"), "{conf}");
}

#[test]
fn run_each_mode_in_process() {
    for mode in ["direct", "gateway", "proxy"] {
        let mut args = vec!["run", "--mode", mode];
        args.extend(SMALL);
        let rows = csv_rows(&ok(&args));
        assert_eq!(rows.len(), 20, "{mode}");
        assert!(rows.iter().all(|r| r[1] == mode), "{mode}");
        let caches: Vec<&str> = rows.iter().map(|r| r[4].as_str()).collect();
        if mode == "proxy" {
            assert!(caches.iter().all(|c| *c == "hit" || *c == "miss"));
        } else {
            assert!(caches.iter().all(|c| c.is_empty()));
        }
    }
}

#[test]
fn runs_are_reproducible_apart_from_timings() {
    let strip = |s: String| -> Vec<String> {
        s.lines()
            .map(|l| l.split(',').take(5).collect::<Vec<_>>().join(","))
            .collect()
    };
    let mut args = vec!["run", "--mode", "proxy", "--sequence", "zipf"];
    args.extend(SMALL);
    assert_eq!(strip(ok(&args)), strip(ok(&args)));
}

#[test]
fn report_summarizes_csv_files() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g.csv");
    let p = dir.path().join("p.csv");
    for (mode, path) in [("gateway", &g), ("proxy", &p)] {
        let mut args = vec!["run", "--mode", mode, "--out", path.to_str().unwrap()];
        args.extend(SMALL);
        ok(&args);
    }
    let agg = dir.path().join("agg.csv");
    let text = ok(&[
        "report",
        g.to_str().unwrap(),
        p.to_str().unwrap(),
        "--aggregates",
        agg.to_str().unwrap(),
    ]);
    assert!(text.contains("== gateway =="), "{text}");
    assert!(text.contains("== proxy =="), "{text}");
    assert!(text.contains("cache hit rate"), "{text}");
    let agg = fs::read_to_string(agg).unwrap();
    assert!(agg.lines().count() > 2, "{agg}");
}

#[test]
fn report_rejects_missing_files() {
    let out = run(&["report", "/nonexistent/x.csv"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn analyze_conditions() {
    let pr = ok(&["analyze", "--policy", "a > 8", "--user", "a > 5"]);
    assert!(pr.contains("verdict: PR"), "{pr}");
    assert!(pr.contains("(a > 8, a > 5)"), "{pr}");
    let nr = ok(&["analyze", "--policy", "a > 8", "--user", "a < 2"]);
    assert!(nr.contains("verdict: NR"), "{nr}");
    let none = ok(&["analyze", "--policy", "a > 5", "--user", "a > 8"]);
    assert!(none.contains("verdict: NONE"), "{none}");
}

#[test]
fn analyze_documents() {
    let text = ok(&[
        "analyze",
        "--policy-file",
        data("lta_policy.xml").to_str().unwrap(),
        "--query-file",
        data("rain_query.xml").to_str().unwrap(),
    ]);
    assert!(text.contains("verdict: NONE"), "{text}");
    assert!(text.contains("WHERE rainrate > 50"), "{text}");
    assert!(text.contains("SIZE 10 ADVANCE 2 TUPLES"), "{text}");
    let merged = &text[text.find("merged:").unwrap()..];
    assert!(!merged.contains("lastval"), "{merged}");

    // A bare obligations block works in place of the policy document.
    let bare = ok(&[
        "analyze",
        "--policy-file",
        data("lta_obligations.xml").to_str().unwrap(),
        "--query-file",
        data("rain_query.xml").to_str().unwrap(),
    ]);
    assert!(bare.contains("verdict: NONE"), "{bare}");
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("bench.conf");
    fs::write(
        &conf,
        "# small run\nn-policies = 4\nn_requests = 7\nn_direct_queries = 4\nmode = gateway\n",
    )
    .unwrap();
    let rows = csv_rows(&ok(&["--config", conf.to_str().unwrap(), "run"]));
    assert_eq!(rows.len(), 7);
    assert!(rows.iter().all(|r| r[1] == "gateway"));

    let rows = csv_rows(&ok(&[
        "--config",
        conf.to_str().unwrap(),
        "run",
        "--n-requests",
        "3",
        "--mode",
        "direct",
    ]));
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r[1] == "direct"));
}

#[test]
fn bad_arguments_fail_cleanly() {
    for args in [
        &["run", "--mode", "sideways"][..],
        &["run", "--dist", "1:2:3"],
        &["run", "--sequence", "bursty"],
        &["analyze", "--policy", "a >", "--user", "a > 1"],
    ] {
        let out = run(args);
        assert!(!out.status.success(), "{args:?}");
        assert!(
            String::from_utf8_lossy(&out.stderr).contains("error"),
            "{args:?}"
        );
    }
}

/// A background `serve` process, killed on drop.
struct Server {
    child: Child,
    addr: String,
}

impl Server {
    fn start(args: &[&str]) -> Server {
        let mut child = bin()
            .args(["serve", "--listen", "127.0.0.1:0"])
            .args(args)
            .stdout(Stdio::piped())
            .spawn()
            .expect("spawning server");
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap())
            .read_line(&mut line)
            .unwrap();
        let addr = line
            .split_whitespace()
            .nth(2)
            .expect("listening line")
            .to_string();
        Server { child, addr }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

#[test]
fn remote_gateway_and_proxy() {
    let mut serve_args = vec!["--workload-policies"];
    serve_args.extend(SMALL);
    let gw = Server::start(&serve_args);
    let px = Server::start(&["--proxy-for", &gw.addr]);

    let mut args = vec!["run", "--mode", "gateway", "--endpoint", &gw.addr];
    args.extend(SMALL);
    let rows = csv_rows(&ok(&args));
    assert_eq!(rows.len(), 20);
    assert!(rows.iter().all(|r| r[3] == "granted"), "{rows:?}");

    let mut args = vec!["run", "--mode", "proxy", "--endpoint", &px.addr];
    args.extend(SMALL);
    let rows = csv_rows(&ok(&args));
    assert_eq!(rows.len(), 20);
    assert!(rows.iter().all(|r| r[3] == "granted"), "{rows:?}");
    assert!(rows.iter().all(|r| r[4] == "hit" || r[4] == "miss"));
    assert!(rows.iter().any(|r| r[4] == "hit"));
}
