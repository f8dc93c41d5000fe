//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Every check is against an oracle written here rather than
//! the library's own helpers.

use std::f64::consts::PI;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use roadpainter::attention::{masked_cross_attention_raw, rvs_attention_weights, rvs_self_attention, AttentionMask};
use roadpainter::geometry::{discrete_frechet, dist3, filter_outliers, Point3, PointSet2, Polyline};
use roadpainter::loss::{
    gt_mask, hungarian, oracle_instance, readout_targets, term_grad, term_value, total_loss, GradTerm, LossWeights,
};
use roadpainter::metrics::MetricConfig;
use roadpainter::pipeline::{ablation_grid, evaluate, format_ablation, run_pipeline, PipelineConfig, PipelineWeights};
use roadpainter::points_mask::{
    fuse_points, sample_mask_points, select_point_set, soft_argmax, Axis, InstanceMask, MaskPointReadout,
};
use roadpainter::scene::{synth_scene, Scene, SynthParams};
use roadpainter::tensor::{BevGrid, GridSpec, Matrix};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || format!("took {elapsed:?}, limit {limit:?}"))
}

fn oracle_softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let n = Normal::new(0.0, 1.0).unwrap();
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| n.sample(rng)).collect()).unwrap()
}

fn soft_argmax_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let normal = Normal::new(0.0, 3.0).unwrap();
    let (h, w) = (8, 1000);
    let logits: Vec<f64> = (0..h * w).map(|_| normal.sample(&mut rng)).collect();
    let mask = InstanceMask::new(h, w, logits.clone()).unwrap();
    let start = Instant::now();
    let coords = sample_mask_points(&mask, Axis::Columns);
    let uniform = soft_argmax(&[0.7; 8]);
    let elapsed = start.elapsed();
    let mut worst = 0.0f64;
    for (j, &c) in coords.iter().enumerate() {
        let col: Vec<f64> = (0..h).map(|r| logits[r * w + j]).collect();
        let expected: f64 = oracle_softmax(&col).iter().enumerate().map(|(r, p)| r as f64 * p).sum();
        worst = worst.max((c - expected).abs());
    }
    ensure(coords.len() == w, || format!("{} coordinates", coords.len()))?;
    ensure(worst < 1e-9, || format!("max deviation {worst:e}"))?;
    ensure(uniform == (h as f64 - 1.0) / 2.0, || {
        format!("uniform column gives {uniform}")
    })?;
    within(elapsed, Duration::from_secs(1))?;
    Ok(format!("max deviation {worst:.1e}, uniform {uniform}, {elapsed:.1?}"))
}

fn rvs_structure() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let start = Instant::now();
    let mut worst_sum = 0.0f64;
    for _ in 0..100 {
        let qr = random_matrix(&mut rng, 4, 8);
        let qv = random_matrix(&mut rng, 4, 8);
        let a = rvs_attention_weights(&qr, &qv, true).unwrap();
        for i in 0..8 {
            let row = a.row(i);
            worst_sum = worst_sum.max((row.iter().sum::<f64>() - 1.0).abs());
            if i < 4 {
                ensure(row[4..].iter().all(|&v| v == 0.0), || {
                    format!("real row {i} attends to virtual: {row:?}")
                })?;
            }
        }
        let (real, _) = rvs_self_attention(&qr, &qv, true).unwrap();
        let mut other = random_matrix(&mut rng, 4, 8);
        other.set(0, 0, 1e6);
        let (real2, _) = rvs_self_attention(&qr, &other, true).unwrap();
        ensure(real == real2, || "real outputs changed with the virtual queries".into())?;
    }
    let elapsed = start.elapsed();
    ensure(worst_sum < 1e-9, || format!("row sum deviation {worst_sum:e}"))?;
    within(elapsed, Duration::from_secs(1))?;
    Ok(format!("row sum deviation {worst_sum:.1e}, {elapsed:.1?}"))
}

fn masked_attention_degeneration() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let spec = GridSpec {
        height: 4,
        width: 5,
        resolution: 1.0,
        x_min: 0.0,
        y_min: 0.0,
    };
    let (c, nq) = (8, 3);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let q = random_matrix(&mut rng, nq, c);
        let bm = random_matrix(&mut rng, spec.cells(), c);
        let b = BevGrid::from_data(spec, c, bm.data().to_vec()).unwrap();
        let m = AttentionMask::from_matrix(Matrix::zeros(nq, spec.cells())).unwrap();
        let got = masked_cross_attention_raw(&q, &b, &m).unwrap();
        for i in 0..nq {
            let scores: Vec<f64> = (0..spec.cells())
                .map(|k| (0..c).map(|ch| q.get(i, ch) * bm.get(k, ch)).sum())
                .collect();
            let w = oracle_softmax(&scores);
            for ch in 0..c {
                let expected: f64 = (0..spec.cells()).map(|k| w[k] * bm.get(k, ch)).sum();
                worst = worst.max((got.get(i, ch) - expected).abs());
            }
        }
    }
    ensure(worst < 1e-9, || format!("max deviation {worst:e}"))?;
    Ok(format!("max deviation {worst:.1e} over 100 cases"))
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    // lexicographic order
    let mut out = Vec::new();
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for c in 0..used.len() {
            if !used[c] {
                used[c] = true;
                prefix.push(c);
                rec(prefix, used, out);
                prefix.pop();
                used[c] = false;
            }
        }
    }
    rec(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

fn perm_cost(m: &Matrix, p: &[usize]) -> f64 {
    p.iter().enumerate().map(|(r, &c)| m.get(r, c)).sum()
}

fn hungarian_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let start = Instant::now();
    let mut ties = 0;
    for n in 2..=6 {
        let perms = permutations(n);
        for case in 0..100 {
            let m = random_matrix(&mut rng, n, n);
            let best = perms.iter().map(|p| perm_cost(&m, p)).fold(f64::INFINITY, f64::min);
            let a = hungarian(&m);
            ensure(a.pairs.len() == n, || format!("n={n}: {} pairs", a.pairs.len()))?;
            let got = a.cost(&m);
            ensure(got == best, || {
                format!("n={n} case {case}: cost {got} vs optimum {best}")
            })?;

            // integer costs make many optima; the lexicographically smallest wins
            let t = Matrix::from_vec(n, n, (0..n * n).map(|_| rng.random_range(0..3) as f64).collect()).unwrap();
            let best = perms.iter().map(|p| perm_cost(&t, p)).fold(f64::INFINITY, f64::min);
            let optima: Vec<&Vec<usize>> = perms.iter().filter(|p| perm_cost(&t, p) == best).collect();
            ties += usize::from(optima.len() > 1);
            let expected: Vec<(usize, usize)> = optima[0].iter().copied().enumerate().collect();
            let got = hungarian(&t);
            ensure(got.pairs == expected, || {
                format!("tie matrix {t:?}: {:?} vs {expected:?}", got.pairs)
            })?;
            ensure(hungarian(&t) == got, || "tie-break is not deterministic".into())?;
        }
    }
    let constant = hungarian(&Matrix::from_vec(4, 4, vec![1.0; 16]).unwrap());
    ensure(constant.pairs == vec![(0, 0), (1, 1), (2, 2), (3, 3)], || {
        format!("constant matrix: {:?}", constant.pairs)
    })?;
    let elapsed = start.elapsed();
    within(elapsed, Duration::from_secs(5))?;
    Ok(format!(
        "500 optima exact, {ties} tied matrices resolved, {elapsed:.1?}"
    ))
}

fn coupling_enum(a: &[Point3], b: &[Point3], i: usize, j: usize) -> f64 {
    // max over the path, min over all monotone couplings from (i, j) to the end
    let d = dist3(&a[i], &b[j]);
    let (n, m) = (a.len(), b.len());
    if i == n - 1 && j == m - 1 {
        return d;
    }
    let mut rest = f64::INFINITY;
    if i + 1 < n {
        rest = rest.min(coupling_enum(a, b, i + 1, j));
    }
    if j + 1 < m {
        rest = rest.min(coupling_enum(a, b, i, j + 1));
    }
    if i + 1 < n && j + 1 < m {
        rest = rest.min(coupling_enum(a, b, i + 1, j + 1));
    }
    d.max(rest)
}

fn frechet_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let start = Instant::now();
    let line = |rng: &mut ChaCha8Rng| {
        let n = rng.random_range(2..=6);
        Polyline::new(
            (0..n)
                .map(|_| {
                    [
                        rng.random_range(-5.0..5.0),
                        rng.random_range(-5.0..5.0),
                        rng.random_range(-1.0..1.0),
                    ]
                })
                .collect(),
        )
        .unwrap()
    };
    for case in 0..200 {
        let (a, b) = (line(&mut rng), line(&mut rng));
        let got = discrete_frechet(&a, &b);
        let expected = coupling_enum(a.points(), b.points(), 0, 0);
        ensure(got == expected, || format!("pair {case}: {got} vs {expected}"))?;
    }
    let elapsed = start.elapsed();
    within(elapsed, Duration::from_secs(5))?;
    Ok(format!("200 pairs exact, {elapsed:.1?}"))
}

fn gradient_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let h = 1e-6;
    let mut summary = Vec::new();
    for term in GradTerm::ALL {
        let mut worst = 0.0f64;
        for _ in 0..50 {
            let (x, t) = term.sample(&mut rng);
            let analytic = term_grad(term, &x, &t);
            for k in 0..x.len() {
                let (mut up, mut down) = (x.clone(), x.clone());
                up[k] += h;
                down[k] -= h;
                let numeric = (term_value(term, &up, &t) - term_value(term, &down, &t)) / (2.0 * h);
                let rel = (analytic[k] - numeric).abs() / analytic[k].abs().max(numeric.abs()).max(1e-8);
                worst = worst.max(rel);
            }
        }
        ensure(worst < 1e-4, || {
            format!("{}: max relative error {worst:e}", term.name())
        })?;
        summary.push(format!("{} {worst:.0e}", term.name()));
    }
    Ok(summary.join(", "))
}

/// Arc of radius `r` swept symmetrically about the x axis, rotated by `rot`.
fn arc(r: f64, rot: f64, offset: [f64; 2], reverse: bool) -> Polyline {
    let half = (30.0 / r).min(0.9);
    let sag = r * (1.0 - half.cos()) / 2.0;
    let (s, c) = rot.sin_cos();
    let mut pts: Vec<Point3> = (0..201)
        .map(|i| {
            let phi = -half + 2.0 * half * i as f64 / 200.0;
            let (x, y) = (r * phi.sin(), r * (1.0 - phi.cos()) - sag);
            [c * x - s * y + offset[0], s * x + c * y + offset[1], 0.0]
        })
        .collect();
    if reverse {
        pts.reverse();
    }
    Polyline::new(pts).unwrap()
}

/// Readout of an oracle mask: ±20 logits on the GT footprint, soft-argmax
/// coordinates, existence where the line has a coordinate, GT direction.
fn oracle_readout(grid: &GridSpec, line: &Polyline, axis: Axis) -> MaskPointReadout {
    let logits = gt_mask(grid, line)
        .iter()
        .map(|&g| if g > 0.5 { 20.0 } else { -20.0 })
        .collect();
    let mask = InstanceMask::new(grid.height, grid.width, logits).unwrap();
    let t = readout_targets(grid, line, axis);
    MaskPointReadout {
        axis,
        coords: sample_mask_points(&mask, axis),
        existence: t.coords.iter().map(|c| if c.is_some() { 1.0 } else { 0.0 }).collect(),
        direction: if t.direction { 1.0 } else { 0.0 },
    }
}

fn mean_error(a: &Polyline, b: &Polyline) -> f64 {
    a.points().iter().zip(b.points()).map(|(p, q)| dist3(p, q)).sum::<f64>() / a.len() as f64
}

fn fusion_recovery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let grid = GridSpec::default();
    let k = 11;
    let mut refined_total = 0.0;
    let mut detected_total = 0.0;
    for scene in 0..20 {
        let r = rng.random_range(20.0..60.0);
        let line = arc(
            r,
            rng.random_range(-0.2..0.2),
            [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)],
            rng.random_bool(0.5),
        );
        let gt = line.resample(k);
        let g = gt.points();
        let detected = Polyline::new(
            (0..k)
                .map(|i| {
                    let (a, b) = (g[i.saturating_sub(1)], g[(i + 1).min(k - 1)]);
                    let (tx, ty) = (b[0] - a[0], b[1] - a[1]);
                    let norm = tx.hypot(ty);
                    let bias = 0.8 * (PI * i as f64 / (k - 1) as f64).sin();
                    [g[i][0] - ty / norm * bias, g[i][1] + tx / norm * bias, g[i][2]]
                })
                .collect(),
        )
        .unwrap();
        let cols = oracle_readout(&grid, &line, Axis::Columns);
        let rows = oracle_readout(&grid, &line, Axis::Rows);
        let chosen = select_point_set(&cols, &rows, 0.5);
        let refined = fuse_points(&detected, chosen, &grid, k, 1.5).map_err(|e| e.to_string())?;
        let (de, re) = (mean_error(&detected, &gt), mean_error(&refined, &gt));
        ensure(re < de, || {
            format!("scene {scene} (R={r:.1}): refined {re:.3} m >= detected {de:.3} m")
        })?;
        detected_total += de;
        refined_total += re;
    }
    let (de, re) = (detected_total / 20.0, refined_total / 20.0);
    ensure(re < 0.5, || format!("mean refined error {re:.3} m"))?;
    Ok(format!("mean point error detected {de:.3} m -> refined {re:.3} m"))
}

fn outlier_rule() -> Outcome {
    let set = |h: f64| {
        let lift = (h * h - 1.0).sqrt();
        PointSet2::all_valid(vec![
            [-2.0, 0.0],
            [-1.0, 0.0],
            [0.0, 0.0],
            [1.0, lift],
            [2.0, 0.0],
            [3.0, 0.0],
            [4.0, 0.0],
        ])
    };
    let threshold = PipelineConfig::default().outlier_threshold;
    ensure(threshold == 1.5, || format!("default threshold {threshold}"))?;
    let far = filter_outliers(&set(2.0), threshold);
    ensure(far.valid == [true, true, true, false, true, true, true], || {
        format!("2.0 m: {:?}", far.valid)
    })?;
    let near = filter_outliers(&set(1.4), threshold);
    ensure(near.valid.iter().all(|&v| v), || format!("1.4 m: {:?}", near.valid))?;
    Ok("2.0 m removed, 1.4 m kept at 1.5 m".into())
}

fn adjacency(scene: &Scene) -> Matrix {
    let n = scene.len();
    Matrix::from_vec(n, n, scene.adjacency.iter().flatten().map(|&v| v as f64).collect()).unwrap()
}

fn metric_identities() -> Outcome {
    let grid = GridSpec::default();
    let metrics = MetricConfig::default();
    let scene = synth_scene(11, &SynthParams::default()).unwrap();
    ensure(!scene.edges().is_empty() && !scene.indices(false).is_empty(), || {
        "smoke scene lacks edges".into()
    })?;
    let points: Vec<Polyline> = scene.centerlines.iter().map(|l| l.resample(11)).collect();
    let scores = vec![1.0; scene.len()];
    let masks: Vec<Vec<f64>> = scene
        .centerlines
        .iter()
        .map(|l| {
            gt_mask(&grid, l)
                .iter()
                .map(|&g| if g > 0.5 { 10.0 } else { -10.0 })
                .collect()
        })
        .collect();
    let perfect = evaluate(&points, &scores, &masks, &adjacency(&scene), &scene, &grid, &metrics);
    ensure((perfect.det_l, perfect.top_ll, perfect.ap_l) == (1.0, 1.0, 1.0), || {
        format!("perfect predictions: {perfect:?}")
    })?;
    let empty = evaluate(&[], &[], &[], &Matrix::zeros(0, 0), &scene, &grid, &metrics);
    ensure((empty.det_l, empty.top_ll, empty.ap_l) == (0.0, 0.0, 0.0), || {
        format!("empty predictions: {empty:?}")
    })?;
    Ok(format!(
        "perfect 1/1/1 and empty 0/0/0 on {} lanes, {} edges",
        scene.len(),
        scene.edges().len()
    ))
}

fn loss_bookkeeping() -> Outcome {
    let w = LossWeights::default();
    ensure(
        (w.top, w.cls, w.det, w.mask, w.mp) == (5.0, 1.5, 0.025, 1.0, 7.0),
        || format!("defaults {w:?}"),
    )?;
    let grid = GridSpec::default();
    let scene = synth_scene(12, &SynthParams::default()).unwrap();

    let cfg = PipelineConfig::default();
    let out = run_pipeline(&scene, &cfg, &PipelineWeights::init(&cfg).unwrap(), None).unwrap();
    let b = total_loss(&out.loss_inputs(), &out.adjacency, &scene, &grid, &w)
        .unwrap()
        .breakdown;
    let recomputed = 5.0 * b.top + 1.5 * b.cls + 0.025 * b.det + 1.0 * b.mask + 7.0 * b.mp;
    ensure((b.total - recomputed).abs() < 1e-9, || {
        format!("total {} vs recomputed {recomputed}", b.total)
    })?;

    let preds: Vec<_> = (0..scene.len())
        .map(|i| oracle_instance(&scene.centerlines[i], scene.is_real[i], &grid, 11, 20.0))
        .collect();
    let p = total_loss(&preds, &adjacency(&scene), &scene, &grid, &w)
        .unwrap()
        .breakdown;
    let worst = p.cls.max(p.det).max(p.mask).max(p.mp);
    ensure(worst < 1e-3, || format!("perfect prediction terms {p:?}"))?;
    Ok(format!(
        "recompute within {:.0e}; perfect cls/det/mask/mp max {worst:.1e}",
        (b.total - recomputed).abs()
    ))
}

fn ablation_harness() -> Outcome {
    let cfg = PipelineConfig::default();
    let scene = synth_scene(13, &SynthParams::default()).unwrap();
    let start = Instant::now();
    let weights = PipelineWeights::init(&cfg).unwrap();
    let rows = ablation_grid(&scene, &cfg, &weights).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure(rows.len() == 8, || format!("{} rows", rows.len()))?;
    for r in &rows {
        let invalid = r.pmf && !r.pgm;
        ensure(r.error.is_some() == invalid, || format!("row {r:?}: error state wrong"))?;
        if let Some(rep) = &r.report {
            ensure([rep.det_l, rep.top_ll, rep.ap_l].iter().all(|v| v.is_finite()), || {
                format!("{rep:?}")
            })?;
        }
    }
    let table = format_ablation(&rows);
    ensure(table.lines().count() == 10, || table.clone())?;
    within(elapsed, Duration::from_secs(30))?;
    for line in table.lines() {
        println!("      | {line}");
    }
    Ok(format!("6 valid runs, 2 rejected, {elapsed:.1?}"))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let bin = env!("CARGO_BIN_EXE_roadpainter");
    let run = |args: &[&str]| -> Result<(), String> {
        let out = Command::new(bin)
            .args(args)
            .current_dir(dir.path())
            .env_remove("ROADPAINTER_OUT_DIR")
            .env_remove("ROADPAINTER_SEED")
            .output()
            .map_err(|e| e.to_string())?;
        ensure(out.status.success(), || {
            format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr))
        })
    };
    run(&["synth", "--seed", "21", "--out", "scene.json"])?;
    run(&["init-weights", "--out", "weights.json"])?;
    for out in ["a.json", "b.json"] {
        run(&[
            "run",
            "--scene",
            "scene.json",
            "--weights",
            "weights.json",
            "--out",
            out,
        ])?;
    }
    let a = std::fs::read(dir.path().join("a.json")).map_err(|e| e.to_string())?;
    let b = std::fs::read(dir.path().join("b.json")).map_err(|e| e.to_string())?;
    ensure(a == b, || "prediction files differ".into())?;
    Ok(format!("{} identical bytes", a.len()))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 12] = [
        ("soft-argmax oracle", soft_argmax_oracle),
        ("RVS structure", rvs_structure),
        ("masked attention degeneration", masked_attention_degeneration),
        ("Hungarian oracle", hungarian_oracle),
        ("Frechet oracle", frechet_oracle),
        ("gradient checks", gradient_checks),
        ("fusion recovery", fusion_recovery),
        ("outlier rule", outlier_rule),
        ("metric identities", metric_identities),
        ("loss bookkeeping", loss_bookkeeping),
        ("ablation harness", ablation_harness),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
