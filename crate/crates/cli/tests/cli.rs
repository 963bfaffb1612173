use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use tempfile::TempDir;
use vss::pricing::{bs_reference, lewis_put};
use vss::{Method, ModelParams, PriceRequest};

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

/// Runs `vss <command> -c <config> -o <dir>/<out> --set ...`, returning the
/// exit code and the output file.
fn run(dir: &TempDir, command: &str, cfg: &str, out: &str, sets: &[&str]) -> (i32, PathBuf) {
    let path = dir.path().join(out);
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_vss"));
    cmd.arg(command).arg("-c").arg(config(cfg)).arg("-o").arg(&path);
    for s in sets {
        cmd.arg("--set").arg(s);
    }
    let status = cmd.env("VSS_WORKERS", "2").stderr(Stdio::null()).status().unwrap();
    (status.code().unwrap(), path)
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

fn header_line(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

fn num(s: &str) -> f64 {
    s.parse().unwrap()
}

fn column(path: &Path, name: &str) -> Vec<f64> {
    let (h, rows) = read_csv(path);
    let i = h.iter().position(|c| c == name).unwrap();
    rows.iter().map(|r| num(&r[i])).collect()
}

#[test]
fn golden_headers() {
    let dir = TempDir::new().unwrap();
    let cases: [(&str, &str, &[&str], &str); 5] = [
        (
            "transform-scan",
            "fig1.toml",
            &["scan.upper=0.1"],
            "abscissa,re_xi,im_xi,k,log_abs_det,arg_det,error",
        ),
        (
            "crossing-scan",
            "fig1.toml",
            &["grid.n=20", "crossing.upper=1.0", "crossing.step=0.5"],
            "sweep,kind,index,value,lower,upper,radius,error",
        ),
        (
            "price",
            "fig8.toml",
            &["price.methods=[\"hybrid\"]", "price.sizes=[20]", "price.maturities=[0.05]", "price.n_coarse=10"],
            "sweep,maturity,n,method,strike,put,call,matrices_s,transform_s,quadrature_s,warnings,error",
        ),
        (
            "mc-benchmark",
            "fig6.toml",
            &["sweep.values=[0.3]", "mc.paths=200", "mc.steps=20", "price.sizes=[20]", "price.n_coarse=10"],
            "sweep,strike,payoff,price,stderr,ci_low,ci_high,fourier,contained,error",
        ),
        (
            "det-identity-check",
            "fig1.toml",
            &["identity.points=2", "identity.sizes=[10]", "identity.include_scan=false"],
            "n,re_u,im_u,re_w,im_w,rel_error,pass,error",
        ),
    ];
    for (i, (command, cfg, sets, header)) in cases.into_iter().enumerate() {
        let (code, path) = run(&dir, command, cfg, &format!("{i}.csv"), sets);
        assert_eq!(code, 0, "{command}");
        assert_eq!(header_line(&path), header, "{command}");
    }
}

#[test]
fn empty_range_writes_header_only() {
    let dir = TempDir::new().unwrap();
    let (code, path) = run(&dir, "transform-scan", "fig1.toml", "e.csv", &["scan.lower=1.0", "scan.upper=0.5"]);
    assert_eq!(code, 0);
    assert_eq!(
        std::fs::read_to_string(path).unwrap(),
        "abscissa,re_xi,im_xi,k,log_abs_det,arg_det,error\n"
    );
}

#[test]
fn det_raw_and_trace_differ_by_sign_past_the_crossing() {
    let dir = TempDir::new().unwrap();
    let sets = ["scan.upper=30.0", "scan.step=2.0"];
    let files: Vec<PathBuf> = ["det_raw", "trace", "prefactor_free"]
        .iter()
        .map(|m| {
            let method = format!("scan.method={m}");
            let (code, path) = run(&dir, "transform-scan", "fig1.toml", &format!("{m}.csv"), &[sets[0], sets[1], &method]);
            assert_eq!(code, 0);
            path
        })
        .collect();
    let re: Vec<Vec<f64>> = files.iter().map(|f| column(f, "re_xi")).collect();
    let im: Vec<Vec<f64>> = files.iter().map(|f| column(f, "im_xi")).collect();
    let x = column(&files[0], "abscissa");
    let mut flipped = 0;
    for i in 0..x.len() {
        // sign of Re(xi_raw conj(xi_other))
        let against = |j: usize| (re[0][i] * re[j][i] + im[0][i] * im[j][i]).signum();
        assert_eq!(against(1), against(2), "Im(u) = {}", x[i]);
        if against(1) < 0.0 {
            flipped += 1;
            assert!(x[i] > 18.0);
        }
    }
    assert!(flipped >= 5);
}

#[test]
fn hybrid_matches_prefactor_free() {
    let dir = TempDir::new().unwrap();
    let (c1, hybrid) = run(&dir, "transform-scan", "fig1.toml", "h.csv", &["scan.method=hybrid"]);
    let (c2, pf) = run(&dir, "transform-scan", "fig1.toml", "p.csv", &["scan.method=prefactor_free"]);
    assert_eq!((c1, c2), (0, 0));
    for col in ["re_xi", "im_xi"] {
        for (a, b) in column(&hybrid, col).iter().zip(column(&pf, col)) {
            assert!((a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1e-300), "{col}: {a} vs {b}");
        }
    }
}

#[test]
fn crossing_scan_without_vol_of_vol_is_empty() {
    let dir = TempDir::new().unwrap();
    let (code, path) = run(&dir, "crossing-scan", "fig1.toml", "c.csv", &["model.nu=0.0", "grid.n=50"]);
    assert_eq!(code, 0);
    let (_, rows) = read_csv(&path);
    assert!(!rows.iter().any(|r| r[1] == "crossing"));
    let first = rows.iter().find(|r| r[1] == "first_crossing").unwrap();
    assert_eq!(first[3], "");
}

#[test]
fn crossing_bounds_dominate_first_crossing() {
    let dir = TempDir::new().unwrap();
    let (code, path) = run(
        &dir,
        "crossing-scan",
        "fig4.toml",
        "c.csv",
        &["sweep.values=[0.3]", "crossing.upper=150.0", "crossing.step=0.5"],
    );
    assert_eq!(code, 0);
    let (_, rows) = read_csv(&path);
    let first = num(&rows.iter().find(|r| r[1] == "first_crossing").unwrap()[3]);
    assert!((first - 92.6).abs() < 0.5, "first crossing {first}");
    let bounds: Vec<f64> = rows.iter().filter(|r| r[1] == "bound" && !r[3].is_empty()).map(|r| num(&r[3])).collect();
    assert!(!bounds.is_empty());
    assert!(bounds.iter().all(|&b| b >= first));
}

#[test]
fn single_price_cell_equals_library_put() {
    let dir = TempDir::new().unwrap();
    let (code, path) = run(
        &dir,
        "price",
        "fig8.toml",
        "p.csv",
        &["price.methods=[\"prefactor_free\"]", "price.sizes=[60]", "price.maturities=[0.05]"],
    );
    assert_eq!(code, 0);
    let put = column(&path, "put");
    assert_eq!(put.len(), 1);
    let params = ModelParams {
        kappa: 0.0,
        nu: 0.25,
        theta: 0.1,
        rho: -0.7,
        x0: 0.1,
        hurst: 0.3,
        s0: 1.0,
        maturity: 0.05,
    };
    let req = PriceRequest {
        n_coarse: 20,
        ..PriceRequest::new(1.0, Method::PrefactorFree, 30, 60)
    };
    let lib = lewis_put(&params, &req).unwrap().put;
    assert_eq!(put[0], lib);
    assert!(column(&path, "transform_s")[0] > 0.0);
}

#[test]
fn monte_carlo_is_seeded_and_matches_black_scholes() {
    let dir = TempDir::new().unwrap();
    let sets = [
        "model.nu=0.0",
        "model.theta=0.0",
        "model.x0=0.2",
        "model.maturity=1.0",
        "sweep.values=[0.3]",
        "mc.paths=20000",
        "mc.steps=50",
        "price.sizes=[50]",
    ];
    let (c1, a) = run(&dir, "mc-benchmark", "fig6.toml", "a.csv", &sets);
    let (c2, b) = run(&dir, "mc-benchmark", "fig6.toml", "b.csv", &sets);
    assert_eq!((c1, c2), (0, 0));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let price = column(&a, "price");
    let stderr = column(&a, "stderr");
    let fourier = column(&a, "fourier");
    for (i, k) in column(&a, "strike").into_iter().enumerate() {
        let (_, call) = bs_reference(1.0, k, 0.04).unwrap();
        assert!((price[i] - call).abs() < 4.0 * stderr[i], "K = {k}");
        assert!((fourier[i] - call).abs() < 1e-6, "K = {k}");
    }
}

#[test]
fn identity_check_exit_codes() {
    let dir = TempDir::new().unwrap();
    // u = 0, w = 0 gives a = 0
    let origin = [
        "identity.points=0",
        "identity.sizes=[30]",
        "identity.include_scan=true",
        "scan.axis=\"w\"",
        "scan.fixed_real=0.0",
        "scan.upper=0.0",
    ];
    let (code, path) = run(&dir, "det-identity-check", "fig1.toml", "o.csv", &origin);
    assert_eq!(code, 0);
    assert_eq!(column(&path, "rel_error"), vec![0.0]);

    let sets = ["identity.points=20", "identity.sizes=[20]", "identity.include_scan=false"];
    let (code, path) = run(&dir, "det-identity-check", "fig1.toml", "r.csv", &sets);
    assert_eq!(code, 0);
    assert!(column(&path, "rel_error").iter().all(|&e| e <= 1e-8));

    let strict = [sets[0], sets[1], sets[2], "identity.tolerance=1e-300"];
    let (code, _) = run(&dir, "det-identity-check", "fig1.toml", "s.csv", &strict);
    assert_eq!(code, 4);
}

#[test]
fn config_and_domain_errors() {
    let dir = TempDir::new().unwrap();
    let (code, path) = run(&dir, "transform-scan", "fig1.toml", "x.csv", &["model.sigma=1.0"]);
    assert_eq!(code, 2);
    assert!(!path.exists());
    let (code, _) = run(&dir, "price", "fig1.toml", "x.csv", &[]);
    assert_eq!(code, 2);
    let (code, _) = run(&dir, "transform-scan", "fig1.toml", "x.csv", &["scan.method=lipschitz", "scan.l_theta=1e12"]);
    assert_eq!(code, 2);

    let extreme = ["scan.lower=1e150", "scan.upper=1e150", "grid.n=20"];
    for m in ["det_raw", "prefactor_free"] {
        let method = format!("scan.method={m}");
        let (code, path) = run(&dir, "transform-scan", "fig1.toml", "d.csv", &[extreme[0], extreme[1], extreme[2], &method]);
        assert_eq!(code, 3, "{m}");
        let (_, rows) = read_csv(&path);
        assert_eq!(rows.len(), 1);
        assert!(rows[0][1].is_empty() && !rows[0][6].is_empty());
    }
}

#[test]
fn shipped_configs_parse_and_round_trip() {
    for entry in std::fs::read_dir(config("")).unwrap() {
        let path = entry.unwrap().path();
        let out = Command::new(env!("CARGO_BIN_EXE_vss"))
            .arg("show-config")
            .arg("-c")
            .arg(&path)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", path.display());
        let dir = TempDir::new().unwrap();
        let again = dir.path().join("again.toml");
        std::fs::write(&again, &out.stdout).unwrap();
        let twice = Command::new(env!("CARGO_BIN_EXE_vss"))
            .arg("show-config")
            .arg("-c")
            .arg(&again)
            .output()
            .unwrap();
        assert_eq!(out.stdout, twice.stdout, "{}", path.display());
    }
}

#[test]
fn json_output() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("c.json");
    let status = Command::new(env!("CARGO_BIN_EXE_vss"))
        .args(["crossing-scan", "--format", "json", "--set", "grid.n=40", "--set", "crossing.upper=30.0", "-c"])
        .arg(config("fig1.toml"))
        .arg("-o")
        .arg(&path)
        .stderr(Stdio::null())
        .status()
        .unwrap();
    assert!(status.success());
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let reports = v.as_array().unwrap();
    assert_eq!(reports.len(), 1);
    assert!(reports[0]["report"].is_object());
    assert!(reports[0]["error"].is_null());
}
