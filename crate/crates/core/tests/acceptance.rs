//! Acceptance run: one PASS/FAIL line per criterion.

mod common;

use std::hint::black_box;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use cellfree::coplearn::{Method, PhiSampling};
use cellfree::csgd::{project_feasible, saa_gradient, sample_minibatch, BeamformerReading};
use cellfree::harness::{
    self, paired_difference, ExperimentResult, ExperimentSpec, MethodSpec, ModelStore, ResultRow,
};
use cellfree::objective::{check_feasible, PowerAllocation, FEASIBILITY_TOL};
use common::*;
use rand::seq::SliceRandom;
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn gradient_oracle() -> Outcome {
    let start = Instant::now();
    let mut r = rng(101);
    let worst = (0..100).map(|_| saa_gradient_instance(&mut r)).fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    outcome(worst < 1e-5 && secs < 10.0, format!("worst relative error {worst:.2e} over 100 instances in {secs:.2}s"))
}

fn projection_oracle() -> Outcome {
    let mut r = rng(102);
    let (mut worst, mut idem, mut nearest_ok) = (0.0f64, 0.0f64, true);
    for _ in 0..1000 {
        let k = r.random_range(1..=4);
        let budget = r.random_range(0.1..10.0);
        let v: Vec<f64> = (0..k).map(|_| r.random_range(-6.0..6.0)).collect();
        let x = project_feasible(&v, budget);
        let oracle = brute_force_projection(&v, budget);
        worst = worst.max(x.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        let again = project_feasible(&x, budget);
        idem = idem.max(again.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        let dist = |y: &[f64]| y.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        for _ in 0..20 {
            let raw: Vec<f64> = (0..k).map(|_| r.random_range(0.0..1.0)).collect();
            let scale = budget * r.random_range(0.0..1.0) / raw.iter().sum::<f64>().max(1e-12);
            let y: Vec<f64> = raw.iter().map(|e| e * scale).collect();
            nearest_ok &= dist(&x) <= dist(&y) + 1e-12;
        }
    }
    outcome(
        worst < 1e-8 && idem < 1e-12 && nearest_ok,
        format!("max deviation {worst:.1e}, idempotence {idem:.1e}, nearest point {}", if nearest_ok { "ok" } else { "violated" }),
    )
}

fn structural_feasibility() -> Outcome {
    let mut r = rng(103);
    let (mut passes, mut bad, mut worst_sum) = (0usize, 0usize, 0.0f64);
    let methods = [Method::Cl, Method::Ncl, Method::Scl];
    while passes < 10_000 {
        let k = [2, 4][r.random_range(0..2)];
        let model = random_model(methods[r.random_range(0..3)], k, &mut r);
        for _ in 0..50 {
            let m = [1, 2, 8, 16][r.random_range(0..4)];
            let chan = channel(m, k, r.random_range(0.0..1.0), &mut r);
            let (p, delta) = model.forward_with_budgets(&chan.rho, chan.h_hat(), 100.0).unwrap();
            if !check_feasible(&p, 100.0, FEASIBILITY_TOL).feasible {
                bad += 1;
            }
            for (i, d) in delta.iter().enumerate() {
                let s: f64 = p.row(i).iter().sum();
                if s != 0.0 {
                    worst_sum = worst_sum.max((s - d).abs());
                }
            }
            passes += 1;
        }
    }
    outcome(
        bad == 0 && worst_sum <= 1e-12,
        format!("{passes} forward passes, {bad} infeasible, max |Σp - δ| {worst_sum:.1e}"),
    )
}

fn permutation_equivariance() -> Outcome {
    let mut r = rng(104);
    let mut worst = 0.0f64;
    for t in 0..50 {
        let method = [Method::Cl, Method::Ncl, Method::Scl][t % 3];
        let model = random_model(method, 4, &mut r);
        let chan = channel(r.random_range(2..=10), 4, 0.2, &mut r);
        let mut perm: Vec<usize> = (0..chan.m()).collect();
        perm.shuffle(&mut r);
        let base = model.forward_pass(&chan.rho, chan.h_hat(), 100.0).unwrap().permute_aps(&perm);
        let moved = chan.permute_aps(&perm);
        let out = model.forward_pass(&moved.rho, moved.h_hat(), 100.0).unwrap();
        worst = worst.max(out.as_slice().iter().zip(base.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    outcome(worst < 1e-12, format!("max deviation {worst:.1e} over 50 permutations"))
}

fn layer_gradients() -> Outcome {
    let mut r = rng(105);
    let (mut dense, mut act, mut bn, mut mlp) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..10 {
        dense = dense.max(dense_fd_error(&mut r));
        act = act.max(activation_fd_error(&mut r));
        bn = bn.max(batchnorm_fd_error(&mut r));
        mlp = mlp.max(mlp_fd_error(&mut r));
    }
    outcome(
        dense < 1e-5 && act < 1e-5 && bn < 1e-4 && mlp < 1e-4,
        format!("dense {dense:.1e}, activations {act:.1e}, batch-norm {bn:.1e}, full MLP {mlp:.1e}"),
    )
}

fn desk_spec() -> ExperimentSpec {
    ExperimentSpec {
        m_train: vec![4],
        m_test: vec![4],
        k: 4,
        snr_db: vec![20.0],
        phi: vec![0.1],
        n_test_samples: 5000,
        seed: 2024,
        ..Default::default()
    }
}

fn row<'a>(res: &'a ExperimentResult, method: &str) -> &'a ResultRow {
    res.rows.iter().find(|r| r.method == method).expect("method evaluated")
}

fn csgd_dominance() -> Outcome {
    let spec = ExperimentSpec {
        methods: vec![MethodSpec::csgd(), MethodSpec::equal_power()],
        n_test_samples: 500,
        ..desk_spec()
    };
    let start = Instant::now();
    let res = harness::run_snr_sweep(&spec, &mut ModelStore::in_memory()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let (c, e) = (row(&res, "CSGD").mean_sum_rate, row(&res, "EP").mean_sum_rate);
    let ratio = c / e;
    outcome(
        ratio >= 1.15 && secs < 300.0,
        format!("CSGD {c:.3} vs equal power {e:.3} bit/s/Hz (×{ratio:.3}) on 500 realizations in {secs:.0}s"),
    )
}

fn method_ordering(store: &mut ModelStore) -> Outcome {
    let spec = ExperimentSpec {
        methods: ["CL", "SCL", "NCL", "EP"].iter().map(|m| m.parse().unwrap()).collect(),
        ..desk_spec()
    };
    let res = harness::run_snr_sweep(&spec, store).unwrap();
    let (cl, scl, ncl, ep) = (row(&res, "CL"), row(&res, "SCL"), row(&res, "NCL"), row(&res, "EP"));
    let (d_scl, s_scl) = paired_difference(cl, scl).unwrap();
    let (d_ncl, s_ncl) = paired_difference(cl, ncl).unwrap();
    let above_ep = [cl, scl, ncl].iter().all(|r| r.mean_sum_rate >= ep.mean_sum_rate);
    outcome(
        d_scl >= -2.0 * s_scl && d_ncl >= 2.0 * s_ncl && above_ep,
        format!(
            "CL {:.3}, SCL {:.3}, NCL {:.3}, EP {:.3}; CL-SCL {d_scl:+.3}±{s_scl:.3}, CL-NCL {d_ncl:+.3}±{s_ncl:.3} (n={})",
            cl.mean_sum_rate, scl.mean_sum_rate, ncl.mean_sum_rate, ep.mean_sum_rate, cl.n_samples
        ),
    )
}

fn robustness(store: &mut ModelStore) -> Outcome {
    let spec = ExperimentSpec {
        methods: vec![
            MethodSpec::learned(Method::Cl).with_policy(PhiSampling::Uniform),
            MethodSpec::learned(Method::Cl).with_policy(PhiSampling::Fixed(0.0)),
        ],
        phi: vec![0.5],
        ..desk_spec()
    };
    let res = harness::run_error_ratio_sweep(&spec, store).unwrap();
    let (robust, fragile) = (row(&res, "CL@uniform"), row(&res, "CL@fixed:0"));
    let (d, s) = paired_difference(robust, fragile).unwrap();
    outcome(
        d > 2.0 * s,
        format!(
            "at φ=0.5: robust {:.3}, non-robust {:.3}, difference {d:+.3}±{s:.3}",
            robust.mean_sum_rate, fragile.mean_sum_rate
        ),
    )
}

fn scalability(store: &mut ModelStore) -> Outcome {
    let spec = ExperimentSpec {
        methods: vec![MethodSpec::learned(Method::Cl)],
        m_test: vec![8, 12],
        n_test_samples: 200,
        ..desk_spec()
    };
    match harness::run_scalability_table(&spec, store) {
        Ok(table) => {
            let pass = table.cells.len() == 2 && table.cells.iter().all(|c| c.relative_sum_rate >= 0.80);
            let cells: Vec<String> = table
                .cells
                .iter()
                .map(|c| format!("M_test={}: {:.3}/{:.3} = {:.3}", c.m_test, c.learned_sum_rate, c.csgd_sum_rate, c.relative_sum_rate))
                .collect();
            outcome(pass, format!("CL trained at M=4; {}", cells.join(", ")))
        }
        Err(e) => outcome(false, format!("error: {e}")),
    }
}

fn determinism() -> Outcome {
    let mut spec = ExperimentSpec {
        methods: ["CL", "NCL", "SCL@fixed:0.2", "CSGD", "EP"].iter().map(|m| m.parse().unwrap()).collect(),
        k: 2,
        m_train: vec![3],
        m_test: vec![4],
        snr_db: vec![0.0, 20.0],
        phi: vec![0.0, 0.3],
        n_test_samples: 40,
        seed: 77,
        ..Default::default()
    };
    spec.training.epochs = 3;
    spec.csgd.max_iters = 60;
    let run = || -> Vec<Vec<u8>> {
        let dir = tempfile::tempdir().unwrap();
        let mut store = ModelStore::new(Some(dir.path().join("ck")), harness::CheckpointMode::LoadOrTrain);
        let snr = harness::run_snr_sweep(&spec, &mut store).unwrap();
        let phi = harness::run_error_ratio_sweep(&spec, &mut store).unwrap();
        let table = harness::run_scalability_table(&spec, &mut store).unwrap();
        let mut files = Vec::new();
        for (stem, csv) in [("snr", snr.to_csv()), ("phi", phi.to_csv()), ("scal", table.to_csv())] {
            let path = harness::write_outputs(dir.path(), stem, &csv, &spec, &snr, &store, 0.0).unwrap();
            files.push(std::fs::read(path).unwrap());
        }
        files
    };
    let (a, b) = (run(), run());
    let bytes: usize = a.iter().map(Vec::len).sum();
    outcome(a == b, format!("3 CSV files ({bytes} bytes) identical across reruns: {}", a == b))
}

/// Least-squares slope of `ln t` against `ln x`.
fn slope(xs: &[f64], ts: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let lt: Vec<f64> = ts.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, mt) = (lx.iter().sum::<f64>() / n, lt.iter().sum::<f64>() / n);
    let cov: f64 = lx.iter().zip(&lt).map(|(a, b)| (a - mx) * (b - mt)).sum();
    cov / lx.iter().map(|a| (a - mx).powi(2)).sum::<f64>()
}

/// Best-of-5 time per `saa_gradient` call at the given sizes.
fn gradient_time(batch: usize, m: usize, k: usize) -> f64 {
    let mut r = rng(106);
    let chan = channel(m, k, 0.1, &mut r);
    let mb = sample_minibatch(&chan.rho, 0.1, 0, batch, BeamformerReading::LocalKnown, &mut r).unwrap();
    let p = PowerAllocation::new(m, k, vec![1.0; m * k]).unwrap();
    let h = chan.h_hat_row(0).to_vec();
    let once = || black_box(saa_gradient(&h, &mb, &p, 1e-9).unwrap());
    let t0 = Instant::now();
    let mut calls = 0u32;
    while t0.elapsed() < Duration::from_millis(20) {
        once();
        calls += 1;
    }
    (0..5)
        .map(|_| {
            let t = Instant::now();
            for _ in 0..calls {
                once();
            }
            t.elapsed().as_secs_f64() / f64::from(calls)
        })
        .fold(f64::INFINITY, f64::min)
}

fn complexity() -> Outcome {
    let factors = [1.0, 2.0, 4.0, 8.0];
    let sweep = |f: &dyn Fn(usize) -> (usize, usize, usize)| -> f64 {
        let ts: Vec<f64> = [1, 2, 4, 8].iter().map(|&s| {
            let (b, m, k) = f(s);
            gradient_time(b, m, k)
        }).collect();
        slope(&factors, &ts)
    };
    let sb = sweep(&|s| (32 * s, 32, 8));
    let sm = sweep(&|s| (32, 16 * s, 8));
    let sk = sweep(&|s| (32, 32, 8 * s));
    let pass = (sb - 1.0).abs() <= 0.25 && (sm - 1.0).abs() <= 0.25 && (sk - 2.0).abs() <= 0.25;
    outcome(pass, format!("log-log slopes: |B| {sb:.2}, M {sm:.2}, K {sk:.2}"))
}

fn main() -> ExitCode {
    let mut store = ModelStore::in_memory();
    let criteria: Vec<(&str, Box<dyn FnOnce(&mut ModelStore) -> Outcome>)> = vec![
        ("gradient oracle", Box::new(|_| gradient_oracle())),
        ("projection oracle", Box::new(|_| projection_oracle())),
        ("structural feasibility", Box::new(|_| structural_feasibility())),
        ("AP-permutation equivariance", Box::new(|_| permutation_equivariance())),
        ("layer-gradient suite", Box::new(|_| layer_gradients())),
        ("CSGD dominance", Box::new(|_| csgd_dominance())),
        ("method ordering", Box::new(method_ordering)),
        ("robustness trend", Box::new(robustness)),
        ("scalability", Box::new(scalability)),
        ("determinism", Box::new(|_| determinism())),
        ("complexity sanity", Box::new(|_| complexity())),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let o = check(&mut store);
        failed += usize::from(!o.pass);
        println!(
            "{} criterion {:>2} {name}: {} [{:.1}s]",
            if o.pass { "PASS" } else { "FAIL" },
            i + 1,
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
