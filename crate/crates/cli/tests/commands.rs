use std::f64::consts::{FRAC_PI_2, TAU};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use proptest::prelude::*;
use tempfile::TempDir;

use circgp::circular::{circ_dist, circ_resultant, wrap};
use circgp::mcmc::{ChainOutput, ScaleSnapshot};
use circgp::pgsp::{PgspDraw, PgspParams, Sym2};
use circgp::wgsp::{site_ids, WgspDraw, WgspParams};
use circgp::{Angle, PgspPosterior, PgspPriors, SiteTable, WgspPosterior, WgspPriors};
use circgp_cli::commands::*;
use circgp_cli::format::exact;
use circgp_cli::{read_archive, read_sites, write_archive, CoordFormat, DirectionUnit, Layout, ModelKind};
use circgp_cli::{Posterior, PosteriorArchive, RunConfig};

fn a(x: f64) -> Angle {
    wrap(x).unwrap()
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

/// Site CSV in metres and exact radians.
fn write_rad_sites(dir: &Path, name: &str, t: &SiteTable) -> PathBuf {
    let mut body = String::from("site_id,x,y,direction\n");
    for (i, id) in t.ids().iter().enumerate() {
        let (x, y) = t.coord(i);
        body += &format!("{id},{},{},{}\n", exact(x * 1000.0), exact(y * 1000.0), exact(t.directions()[i].radians()));
    }
    write(dir, name, &body)
}

fn quick_config(model: ModelKind, data: &Path) -> RunConfig {
    let mut cfg = RunConfig { model, data: Some(data.to_path_buf()), ..RunConfig::default() };
    cfg.apply_overrides(&["n_iter=5000", "burnin=1500", "thin=5", "adapt_end=1500"]).unwrap();
    cfg
}

fn simulated(model: ModelKind, n: usize, seed: u64) -> SiteTable {
    let params = match model {
        ModelKind::Wrapped => SimParams::Wrapped(WgspParams { mu: a(0.3), sigma2: 0.2, phi: 0.05 }),
        ModelKind::Projected => {
            SimParams::Projected(PgspParams { mu: [1.0, 0.5], tau2: 1.0, rho: 0.2, phi: 0.05 })
        }
    };
    let spec = SimulateSpec { params, layout: Layout::Random, n, width_km: 100.0, height_km: 100.0, seed };
    cmd_simulate(&spec).unwrap().sites
}

// ------------------------------------------------------------ ingestion

#[test]
fn read_sites_examples() {
    let dir = TempDir::new().unwrap();
    let p = write(dir.path(), "s.csv", "site_id,x,y,direction\na,0,0,90\nb,1000,0,360\n");
    let t = read_sites(&p, CoordFormat::UtmM, DirectionUnit::Deg).unwrap();
    assert!((t.directions()[0].radians() - FRAC_PI_2).abs() < 1e-15);
    assert_eq!(t.directions()[1].radians(), 0.0);

    let p = write(dir.path(), "d.csv", "site_id,x,y,direction\nq,0,0,1\nr,1,1,2\nq,2,2,3\n");
    let err = read_sites(&p, CoordFormat::UtmM, DirectionUnit::Deg).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("`q`") && msg.contains("lines 2 and 4"), "{msg}");
    assert_eq!(err.exit_code(), 2);
}

// ------------------------------------------------------------- describe

#[test]
fn describe_singleton_has_zero_variance() {
    let t = SiteTable::new(vec!["a".into()], vec![(0.0, 0.0)], vec![a(1.0)]).unwrap();
    let d = cmd_describe(&t, DEFAULT_ROSE_BINS).unwrap();
    assert_eq!(d.summary.variance, 0.0);
    assert_eq!(d.summary.std_dev, 0.0);
    let mut buf = Vec::new();
    write_summary_csv(&mut buf, &d).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap(), "n,mean_direction,median_direction,variance,std_dev\n1,1,1,0,0\n");
}

#[test]
fn rose_csv_has_default_sixteen_bins() {
    let t = simulated(ModelKind::Wrapped, 30, 2);
    let d = cmd_describe(&t, DEFAULT_ROSE_BINS).unwrap();
    let mut buf = Vec::new();
    write_rose_csv(&mut buf, &d).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 17);
    assert_eq!(lines[0], "bin,start_deg,end_deg,count,proportion");
    assert_eq!(lines[16].split(',').nth(2), Some("360"));
    let total: usize = lines[1..].iter().map(|l| l.split(',').nth(3).unwrap().parse::<usize>().unwrap()).sum();
    assert_eq!(total, 30);
}

fn printed_value(text: &str, key: &str) -> f64 {
    text.lines().find_map(|l| l.strip_prefix(key)).unwrap().trim().parse().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn printed_std_dev_matches_printed_variance(xs in prop::collection::vec(0.0f64..TAU, 2..40), spread in 0.05f64..1.0) {
        let dirs: Vec<Angle> = xs.iter().map(|&x| a(x * spread)).collect();
        prop_assume!(circ_resultant(&dirs).unwrap() > 1e-3);
        let n = dirs.len();
        let t = SiteTable::new(site_ids(n), (0..n).map(|i| (i as f64, 0.0)).collect(), dirs).unwrap();
        let d = cmd_describe(&t, 8).unwrap();
        let mut buf = Vec::new();
        print_describe(&mut buf, &d).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let v = printed_value(&text, "variance");
        let s = printed_value(&text, "std_dev");
        prop_assert!(((-2.0 * (1.0 - v).ln()).sqrt() - s).abs() < 1e-6, "{}", text);
    }
}

// ------------------------------------------------------------- simulate

#[test]
fn simulate_tiny_variance_gives_constant_field() {
    let spec = SimulateSpec {
        params: SimParams::Wrapped(WgspParams { mu: a(1.3), sigma2: 1e-12, phi: 0.1 }),
        layout: Layout::Grid,
        n: 25,
        width_km: 50.0,
        height_km: 50.0,
        seed: 4,
    };
    let sim = cmd_simulate(&spec).unwrap();
    for x in sim.sites.directions() {
        assert!(circ_dist(*x, a(1.3)) < 1e-10);
    }
}

#[test]
fn simulate_same_seed_gives_identical_files() {
    let dir = TempDir::new().unwrap();
    let spec = SimulateSpec {
        params: SimParams::Projected(PgspParams { mu: [0.4, -0.2], tau2: 2.0, rho: -0.3, phi: 0.02 }),
        layout: Layout::Random,
        n: 40,
        width_km: 300.0,
        height_km: 200.0,
        seed: 17,
    };
    let mut files = Vec::new();
    for run in 0..2 {
        let obs = dir.path().join(format!("obs{run}.csv"));
        let truth = truth_path(&obs);
        write_simulation(&obs, &truth, &cmd_simulate(&spec).unwrap()).unwrap();
        files.push((fs::read(&obs).unwrap(), fs::read(&truth).unwrap()));
    }
    assert_eq!(files[0], files[1]);
    let other = cmd_simulate(&SimulateSpec { seed: 18, ..spec }).unwrap();
    assert_ne!(other.sites, cmd_simulate(&spec).unwrap().sites);
}

#[test]
fn simulated_observations_round_trip_through_ingestion() {
    let dir = TempDir::new().unwrap();
    let spec = SimulateSpec {
        params: SimParams::Wrapped(WgspParams { mu: a(0.2), sigma2: 0.5, phi: 0.05 }),
        layout: Layout::Grid,
        n: 12,
        width_km: 300.0,
        height_km: 300.0,
        seed: 1,
    };
    let sim = cmd_simulate(&spec).unwrap();
    let obs = dir.path().join("obs.csv");
    write_simulation(&obs, &truth_path(&obs), &sim).unwrap();
    let back = read_sites(&obs, CoordFormat::UtmM, DirectionUnit::Deg).unwrap();
    assert_eq!(back.ids(), sim.sites.ids());
    for i in 0..back.len() {
        let (x0, y0) = sim.sites.coord(i);
        let (x1, y1) = back.coord(i);
        assert!((x0 - x1).abs() < 1e-3 && (y0 - y1).abs() < 1e-3);
        assert!(circ_dist(back.directions()[i], sim.sites.directions()[i]) < 1e-9);
    }
    let truth = fs::read_to_string(truth_path(&obs)).unwrap();
    assert!(truth.starts_with("site_id,x_km,y_km,direction_rad,latent,k\n"));
    // Latent truth is exact: y = x + 2πk.
    for line in truth.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let x: f64 = f[3].parse().unwrap();
        let y: f64 = f[4].parse().unwrap();
        let k: f64 = f[5].parse().unwrap();
        assert!((x + TAU * k - y).abs() < 1e-12);
    }
}

/// Kolmogorov distance between a sample on [0, 2π) and the uniform law.
fn ks_uniform(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, x)| {
            let f = x / TAU;
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn projected_isotropic_zero_mean_directions_are_uniform() {
    // 1000 independent fields of 100 grid sites 100 km apart: the correlation
    // e^{-0.9·100} is nil, so the 10⁵ directions are iid.
    let mut dirs = Vec::with_capacity(100_000);
    for seed in 0..1000 {
        let spec = SimulateSpec {
            params: SimParams::Projected(PgspParams { mu: [0.0, 0.0], tau2: 1.0, rho: 0.0, phi: 0.9 }),
            layout: Layout::Grid,
            n: 100,
            width_km: 1000.0,
            height_km: 1000.0,
            seed,
        };
        dirs.extend(cmd_simulate(&spec).unwrap().sites.directions().iter().map(|d| d.radians()));
    }
    assert_eq!(dirs.len(), 100_000);
    let ks = ks_uniform(dirs);
    assert!(ks < 0.02, "KS distance {ks}");
}

// ------------------------------------------------------------------ fit

#[test]
fn demo_fit_is_fast_readable_and_reproducible() {
    let dir = TempDir::new().unwrap();
    let data = write_rad_sites(dir.path(), "obs.csv", &simulated(ModelKind::Wrapped, 20, 9));
    let mut cfg = quick_config(ModelKind::Wrapped, &data);
    cfg.direction_unit = DirectionUnit::Rad;
    let start = Instant::now();
    let archive = cmd_fit(&cfg, &dir.path().join("a1")).unwrap();
    assert!(start.elapsed().as_secs_f64() < 60.0);
    assert_eq!(archive.manifest.draws_per_chain, 700);
    assert_eq!(read_archive(&dir.path().join("a1")).unwrap(), archive);

    cmd_fit(&cfg, &dir.path().join("a2")).unwrap();
    for name in ["manifest.json", "mu.csv", "sigma2.csv", "phi.csv", "k_chain_0.csv", "k_chain_1.csv"] {
        assert_eq!(fs::read(dir.path().join("a1").join(name)).unwrap(), fs::read(dir.path().join("a2").join(name)).unwrap());
    }
    // A changed thread count does not change results or the archive.
    cfg.chain.threads = 1;
    cmd_fit(&cfg, &dir.path().join("a3")).unwrap();
    assert_eq!(
        fs::read(dir.path().join("a1/k_chain_1.csv")).unwrap(),
        fs::read(dir.path().join("a3/k_chain_1.csv")).unwrap()
    );
    assert_eq!(fs::read(dir.path().join("a1/manifest.json")).unwrap(), fs::read(dir.path().join("a3/manifest.json")).unwrap());
}

#[test]
fn fit_rejects_burnin_not_below_n_iter_before_reading_data() {
    let mut cfg = RunConfig { data: Some(PathBuf::from("/nonexistent.csv")), ..RunConfig::default() };
    cfg.apply_overrides(&["n_iter=100", "burnin=100"]).unwrap();
    let dir = TempDir::new().unwrap();
    let err = cmd_fit(&cfg, &dir.path().join("a")).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("burnin"), "{err}");
    assert!(!dir.path().join("a").exists());
}

#[test]
fn fit_leaves_no_partial_archive_on_failure() {
    let dir = TempDir::new().unwrap();
    // Coincident sites make the correlation matrix singular.
    let data = write(dir.path(), "bad.csv", "site_id,x,y,direction\na,0,0,1\nb,0,0,2\nc,1000,0,3\nd,0,1000,4\ne,900,900,5\n");
    let cfg = quick_config(ModelKind::Wrapped, &data);
    let err = cmd_fit(&cfg, &dir.path().join("a")).unwrap_err();
    assert_eq!(err.exit_code(), 3, "{err}");
    let left: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(left, vec![std::ffi::OsString::from("bad.csv")]);
}

// -------------------------------------------------------------- archive

fn snapshots(n: usize) -> Vec<ScaleSnapshot> {
    (0..n).map(|i| ScaleSnapshot { iter: 50 * (i + 1), log_sd: vec![0.1 * i as f64, -0.3] }).collect()
}

fn wrapped_archive(mus: &[f64], sig: &[f64], ks: &[Vec<i32>], n_sites: usize) -> PosteriorArchive {
    let chains: Vec<ChainOutput<WgspDraw>> = (0..2)
        .map(|c| ChainOutput {
            seed: 7 + c as u64,
            draws: mus
                .iter()
                .zip(sig)
                .zip(ks)
                .map(|((&m, &s), k)| WgspDraw { mu: a(m + c as f64), sigma2: s, phi: s / 10.0, k: k.clone() })
                .collect(),
            acceptance: vec![("phi".into(), 0.25 + 0.01 * c as f64)],
            nan_rejections: vec![("phi".into(), c as u64)],
            counters: vec![("k_underflow".into(), 3)],
            scale_history: snapshots(3)
                .into_iter()
                .map(|s| ScaleSnapshot { log_sd: vec![s.log_sd[0]], ..s })
                .collect(),
        })
        .collect();
    let post = Posterior::Wrapped(WgspPosterior { chains, priors: WgspPriors::default() });
    PosteriorArchive::new(post, &RunConfig::default(), &site_ids(n_sites))
}

fn projected_archive(vals: &[f64], n_sites: usize) -> PosteriorArchive {
    let chains: Vec<ChainOutput<PgspDraw>> = (0..3)
        .map(|c| ChainOutput {
            seed: c,
            draws: vals
                .iter()
                .map(|&v| PgspDraw {
                    mu: [v, -v * (c + 1) as f64],
                    tau2: v.abs() + 0.1,
                    rho: v.tanh(),
                    phi: 0.05,
                    r: (0..n_sites).map(|i| 1.0 + v.abs() * i as f64).collect(),
                })
                .collect(),
            acceptance: vec![("a".into(), 0.1), ("b".into(), 1.0 / 3.0)],
            nan_rejections: vec![],
            counters: vec![],
            scale_history: snapshots(4),
        })
        .collect();
    let post = Posterior::Projected(PgspPosterior { chains, priors: PgspPriors::default() });
    let cfg = RunConfig { model: ModelKind::Projected, ..RunConfig::default() };
    PosteriorArchive::new(post, &cfg, &site_ids(n_sites))
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn wrapped_archive_round_trips(
        draws in prop::collection::vec((-10.0f64..10.0, 1e-9f64..1e3, prop::collection::vec(-2i32..=2, 4)), 0..12),
    ) {
        let mus: Vec<f64> = draws.iter().map(|d| d.0).collect();
        let sig: Vec<f64> = draws.iter().map(|d| d.1).collect();
        let ks: Vec<Vec<i32>> = draws.iter().map(|d| d.2.clone()).collect();
        let archive = wrapped_archive(&mus, &sig, &ks, 4);
        let dir = TempDir::new().unwrap();
        let (p1, p2) = (dir.path().join("one"), dir.path().join("two"));
        write_archive(&p1, &archive).unwrap();
        let back = read_archive(&p1).unwrap();
        prop_assert_eq!(&back, &archive);
        write_archive(&p2, &back).unwrap();
        prop_assert_eq!(dir_bytes(&p1), dir_bytes(&p2));
    }

    #[test]
    fn projected_archive_round_trips(vals in prop::collection::vec(-1e6f64..1e6, 0..10), n_sites in 1usize..6) {
        let archive = projected_archive(&vals, n_sites);
        let dir = TempDir::new().unwrap();
        let (p1, p2) = (dir.path().join("one"), dir.path().join("two"));
        write_archive(&p1, &archive).unwrap();
        let back = read_archive(&p1).unwrap();
        prop_assert_eq!(&back, &archive);
        write_archive(&p2, &back).unwrap();
        prop_assert_eq!(dir_bytes(&p1), dir_bytes(&p2));
    }
}

#[test]
fn infinite_psrf_is_stored_as_null() {
    // Constant but different chains: zero within-chain variance.
    let chains: Vec<ChainOutput<WgspDraw>> = (0..2)
        .map(|c| ChainOutput {
            seed: c,
            draws: vec![WgspDraw { mu: a(0.5 + c as f64), sigma2: 1.0 + c as f64, phi: 0.1, k: vec![0] }; 12],
            acceptance: vec![],
            nan_rejections: vec![],
            counters: vec![],
            scale_history: vec![],
        })
        .collect();
    let post = Posterior::Wrapped(WgspPosterior { chains, priors: WgspPriors::default() });
    let archive = PosteriorArchive::new(post, &RunConfig::default(), &site_ids(1));
    assert!(archive.manifest.psrf.iter().any(|(_, v)| v.is_none()));
    assert_eq!(converged(&archive.manifest.psrf), Some(false));
    let dir = TempDir::new().unwrap();
    write_archive(&dir.path().join("a"), &archive).unwrap();
    let text = fs::read_to_string(dir.path().join("a/manifest.json")).unwrap();
    assert!(text.contains("null"), "{text}");
    assert_eq!(read_archive(&dir.path().join("a")).unwrap(), archive);
}

#[test]
fn archive_refuses_to_replace_foreign_directory() {
    let dir = TempDir::new().unwrap();
    let target = dir.path().join("keep");
    fs::create_dir(&target).unwrap();
    fs::write(target.join("notes.txt"), "mine").unwrap();
    let err = write_archive(&target, &wrapped_archive(&[0.1], &[1.0], &[vec![0]], 1)).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert_eq!(fs::read_to_string(target.join("notes.txt")).unwrap(), "mine");
}

#[test]
fn archive_replaces_earlier_archive() {
    let dir = TempDir::new().unwrap();
    let target = dir.path().join("arch");
    write_archive(&target, &wrapped_archive(&[0.1, 0.2], &[1.0, 2.0], &[vec![0], vec![1]], 1)).unwrap();
    let second = wrapped_archive(&[0.3], &[3.0], &[vec![-1]], 1);
    write_archive(&target, &second).unwrap();
    assert_eq!(read_archive(&target).unwrap(), second);
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
}

// ----------------------------------------------------------------- krig

const SITES3: [(f64, f64); 3] = [(0.0, 0.0), (10.0, 0.0), (0.0, 10.0)];

fn inverse3(m: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let c = |r: usize, s: usize| {
        let (r0, r1) = ((r + 1) % 3, (r + 2) % 3);
        let (s0, s1) = ((s + 1) % 3, (s + 2) % 3);
        m[r0][s0] * m[r1][s1] - m[r0][s1] * m[r1][s0]
    };
    let det: f64 = (0..3).map(|j| m[0][j] * c(0, j)).sum();
    let mut inv = [[0.0; 3]; 3];
    for (i, row) in inv.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = c(j, i) / det;
        }
    }
    inv
}

/// Frozen single-draw wrapped archive over the 3-site fixture, written with
/// its data file; returns the archive directory.
fn frozen_wrapped(dir: &Path, draw: &WgspDraw, x: [f64; 3]) -> PathBuf {
    let t = SiteTable::new(site_ids(3), SITES3.to_vec(), x.iter().map(|&v| a(v)).collect()).unwrap();
    let data = write_rad_sites(dir, "three.csv", &t);
    let cfg = RunConfig { data: Some(data), direction_unit: DirectionUnit::Rad, ..RunConfig::default() };
    let chain = ChainOutput {
        seed: 1,
        draws: vec![draw.clone()],
        acceptance: vec![],
        nan_rejections: vec![],
        counters: vec![],
        scale_history: vec![],
    };
    let post = Posterior::Wrapped(WgspPosterior { chains: vec![chain], priors: WgspPriors::default() });
    let path = dir.join("frozen");
    write_archive(&path, &PosteriorArchive::new(post, &cfg, t.ids())).unwrap();
    path
}

#[test]
fn krig_three_site_fixture_matches_dense_oracle() {
    let dir = TempDir::new().unwrap();
    let x = [0.4, 6.0, 1.1];
    let draw = WgspDraw { mu: a(0.5), sigma2: 0.8, phi: 0.1, k: vec![0, -1, 1] };
    let archive = frozen_wrapped(dir.path(), &draw, x);
    let targets = write(dir.path(), "t.csv", "target_id,x,y\nt1,3000,4000\nt2,20000,-5000\n");
    let out = cmd_krig(&KrigRequest { archive, data: None, targets, model: Some(ModelKind::Wrapped), seed: Some(5) })
        .unwrap();

    let corr = |p: (f64, f64), q: (f64, f64)| (-draw.phi * (p.0 - q.0).hypot(p.1 - q.1)).exp();
    let mut r = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = corr(SITES3[i], SITES3[j]);
        }
    }
    let rinv = inverse3(r);
    let y: Vec<f64> = (0..3).map(|i| x[i] + TAU * draw.k[i] as f64).collect();
    let mu = draw.mu.radians();
    for (t, target) in [(3.0, 4.0), (20.0, -5.0)].into_iter().enumerate() {
        let r0: Vec<f64> = SITES3.iter().map(|&s| corr(s, target)).collect();
        let w: Vec<f64> = (0..3).map(|i| (0..3).map(|j| rinv[i][j] * r0[j]).sum()).collect();
        let mean = mu + (0..3).map(|i| w[i] * (y[i] - mu)).sum::<f64>();
        let var = draw.sigma2 * (1.0 - (0..3).map(|i| w[i] * r0[i]).sum::<f64>());
        let (gc, gs) = ((-var / 2.0).exp() * mean.cos(), (-var / 2.0).exp() * mean.sin());
        let got = &out.results[t];
        assert!((got.g_c - gc).abs() < 1e-10 && (got.g_s - gs).abs() < 1e-10);
        assert!((got.concentration - gc.hypot(gs)).abs() < 1e-10);
        assert!(circ_dist(got.direction, a(gs.atan2(gc))) < 1e-10);
    }
}

#[test]
fn krig_at_training_site_returns_its_observation() {
    let dir = TempDir::new().unwrap();
    let x = [0.4, 6.0, 1.1];
    let draw = WgspDraw { mu: a(0.5), sigma2: 0.8, phi: 0.1, k: vec![0, -1, 1] };
    let archive = frozen_wrapped(dir.path(), &draw, x);
    let targets = write(dir.path(), "t.csv", "target_id,x,y\nhere,10000,0\n");
    let out = cmd_krig(&KrigRequest { archive, data: None, targets, model: None, seed: None }).unwrap();
    assert_eq!(out.results[0].direction.radians(), 6.0);
    assert_eq!(out.results[0].concentration, 1.0);
}

#[test]
fn krig_empty_targets_writes_header_only() {
    let dir = TempDir::new().unwrap();
    let draw = WgspDraw { mu: a(0.5), sigma2: 0.8, phi: 0.1, k: vec![0, 0, 0] };
    let archive = frozen_wrapped(dir.path(), &draw, [0.1, 0.2, 0.3]);
    let targets = write(dir.path(), "t.csv", "target_id,x,y\n");
    let out = cmd_krig(&KrigRequest { archive, data: None, targets, model: None, seed: None }).unwrap();
    let (p, d) = (dir.path().join("p.csv"), dir.path().join("d.csv"));
    write_krig_outputs(&p, Some(&d), &out).unwrap();
    assert_eq!(fs::read_to_string(p).unwrap(), "target_id,direction_rad,direction_deg,concentration\n");
    assert_eq!(fs::read_to_string(d).unwrap(), "target_id,draw,direction_rad\n");
}

#[test]
fn krig_site_mismatch_lists_unmatched_ids() {
    let dir = TempDir::new().unwrap();
    let draw = WgspDraw { mu: a(0.5), sigma2: 0.8, phi: 0.1, k: vec![0, 0, 0] };
    let archive = frozen_wrapped(dir.path(), &draw, [0.1, 0.2, 0.3]);
    let other = write(dir.path(), "other.csv", "site_id,x,y,direction\ns1,0,0,0.1\ns2,10000,0,0.2\nzz,0,10000,0.3\n");
    let targets = write(dir.path(), "t.csv", "target_id,x,y\nt,1,1\n");
    let err = cmd_krig(&KrigRequest { archive: archive.clone(), data: Some(other), targets: targets.clone(), model: None, seed: None })
        .unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("in archive only: s3") && msg.contains("in data only: zz"), "{msg}");
    assert_eq!(err.exit_code(), 2);

    // Same ids in another order are realigned.
    let shuffled = write(dir.path(), "shuf.csv", "site_id,x,y,direction\ns3,0,10000,0.3\ns1,0,0,0.1\ns2,10000,0,0.2\n");
    let a1 = cmd_krig(&KrigRequest { archive: archive.clone(), data: None, targets: targets.clone(), model: None, seed: None }).unwrap();
    let a2 = cmd_krig(&KrigRequest { archive: archive.clone(), data: Some(shuffled), targets: targets.clone(), model: None, seed: None }).unwrap();
    assert_eq!(a1, a2);

    let err = cmd_krig(&KrigRequest { archive, data: None, targets, model: Some(ModelKind::Projected), seed: None }).unwrap_err();
    assert!(err.to_string().contains("projected"));
}

#[test]
fn krig_projected_archive_end_to_end() {
    let dir = TempDir::new().unwrap();
    let data = write_rad_sites(dir.path(), "p.csv", &simulated(ModelKind::Projected, 15, 3));
    let mut cfg = quick_config(ModelKind::Projected, &data);
    cfg.direction_unit = DirectionUnit::Rad;
    let arch = dir.path().join("arch");
    cmd_fit(&cfg, &arch).unwrap();
    let targets = write(dir.path(), "t.csv", "target_id,x,y\nm,50000,50000\nfar,500000,500000\n");
    let req = KrigRequest { archive: arch, data: None, targets, model: Some(ModelKind::Projected), seed: None };
    let out = cmd_krig(&req).unwrap();
    assert_eq!(out.results.len(), 2);
    for r in &out.results {
        assert!((0.0..=1.0).contains(&r.concentration));
        assert_eq!(r.predictive_draws.len(), 1400);
    }
    // Repeated kriging is byte-identical.
    let (p1, p2) = (dir.path().join("1.csv"), dir.path().join("2.csv"));
    write_krig_outputs(&p1, None, &out).unwrap();
    write_krig_outputs(&p2, None, &cmd_krig(&req).unwrap()).unwrap();
    assert_eq!(fs::read(p1).unwrap(), fs::read(p2).unwrap());
}

// ----------------------------------------------------------------- eval

#[test]
fn eval_with_validation_sites_in_training_scores_zero() {
    let t = simulated(ModelKind::Wrapped, 15, 5);
    let cfg = quick_config(ModelKind::Wrapped, Path::new("unused.csv"));
    let valid = t.subset(&[1, 4, 9]);
    let (report, _) = evaluate_holdout(&cfg, &t, &valid).unwrap();
    assert!(report.ape.abs() < 1e-12, "APE {}", report.ape);
    assert!(report.crps.abs() < 1e-12, "CRPS {}", report.crps);
}

#[test]
fn eval_on_smooth_field_beats_its_circular_variance() {
    let dir = TempDir::new().unwrap();
    let spec = SimulateSpec {
        params: SimParams::Wrapped(WgspParams { mu: a(2.0), sigma2: 1.0, phi: 0.01 }),
        layout: Layout::Random,
        n: 50,
        width_km: 300.0,
        height_km: 300.0,
        seed: 21,
    };
    let sites = cmd_simulate(&spec).unwrap().sites;
    let circ_var = 1.0 - circ_resultant(sites.directions()).unwrap();
    let data = write_rad_sites(dir.path(), "obs.csv", &sites);
    let mut cfg = quick_config(ModelKind::Wrapped, &data);
    cfg.direction_unit = DirectionUnit::Rad;
    cfg.n_valid = 10;
    let e = cmd_eval(&cfg).unwrap();
    assert!(e.report.ape < circ_var, "APE {} vs circular variance {circ_var}", e.report.ape);

    // Outputs are labelled with the split seed and reproducible.
    let (o1, s1) = (dir.path().join("e1.csv"), dir.path().join("s1.csv"));
    write_eval_outputs(&o1, Some(&s1), &e).unwrap();
    let text = fs::read_to_string(&o1).unwrap();
    assert!(text.starts_with("model,split_seed,n_valid,ape,crps\nwrapped,1,10,"), "{text}");
    let (o2, s2) = (dir.path().join("e2.csv"), dir.path().join("s2.csv"));
    write_eval_outputs(&o2, Some(&s2), &cmd_eval(&cfg).unwrap()).unwrap();
    assert_eq!(fs::read(&o1).unwrap(), fs::read(&o2).unwrap());
    assert_eq!(fs::read(&s1).unwrap(), fs::read(&s2).unwrap());
    assert_eq!(fs::read_to_string(&s1).unwrap().lines().count(), 11);
}

#[test]
fn eval_rejects_n_valid_not_below_n() {
    let dir = TempDir::new().unwrap();
    let data = write_rad_sites(dir.path(), "obs.csv", &simulated(ModelKind::Wrapped, 8, 1));
    let mut cfg = quick_config(ModelKind::Wrapped, &data);
    cfg.n_valid = 8;
    assert_eq!(cmd_eval(&cfg).unwrap_err().exit_code(), 2);
}

#[test]
fn layouts_stay_inside_the_rectangle() {
    use rand::SeedableRng;
    let mut rng = circgp::mcmc::ChainRng::seed_from_u64(1);
    for layout in [Layout::Grid, Layout::Random] {
        for n in [1, 7, 60] {
            let pts = layout_coords(layout, n, 300.0, 120.0, &mut rng);
            assert_eq!(pts.len(), n);
            assert!(pts.iter().all(|&(x, y)| (0.0..=300.0).contains(&x) && (0.0..=120.0).contains(&y)));
        }
    }
    let grid = layout_coords(Layout::Grid, 4, 2.0, 2.0, &mut rng);
    assert_eq!(grid, vec![(0.5, 0.5), (1.5, 0.5), (0.5, 1.5), (1.5, 1.5)]);
}

#[test]
fn projected_config_priors_reach_the_archive() {
    let mut cfg = RunConfig { model: ModelKind::Projected, ..RunConfig::default() };
    cfg.apply_overrides(&["mu_cov12=2", "tau2_rate=3"]).unwrap();
    let snap = cfg.snapshot();
    let back = RunConfig::from_snapshot(&snap).unwrap();
    assert_eq!(back.pgsp.mu_cov, Sym2 { xx: 10.0, xy: 2.0, yy: 10.0 });
    assert_eq!(back.pgsp.tau2_rate, 3.0);
}
