//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::path::Path;
use std::process::Command as Process;
use std::time::{Duration, Instant};

use extremal_clock::{run, Command, ExperimentConfig};
use extremal_clock_core::conditions::{
    condition31_bound, condition31_estimate, mixing_check, nu_t, q_tail, sigma_sq_t, tail_profile,
};
use extremal_clock_core::ehrenfest::{distance_process_check, EhrenfestChain};
use extremal_clock_core::engine::{
    jensen_sandwich_check, simulate_trajectory, CompleteGraph, Dynamics, RandomHopping, ScalingSchedule,
    TabulatedEnvironment,
};
use extremal_clock_core::measures::{estimate_range_avoidance, sample_poisson_points, sup_path, TailMeasure};
use extremal_clock_core::pspin::{
    bivariate_max_cdf, gaussian_comparison_rhs, make_schedule, max_cdf_mc, random_comparison_pair, PSpinInstance,
    SkModel, SpinState,
};
use extremal_clock_core::stats::{
    ks_statistic, ks_threshold, replica_rng, replicate, replicate_collect, EmpiricalDistribution,
};
use nalgebra::DMatrix;
use serde_json::Value;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

type Outcome = Result<(bool, String), Box<dyn std::error::Error>>;

/// Expected hitting time `E_{l−1} T_l` from the linear system
/// `h(k) = 1 + p_up(k) h(k+1) + p_down(k) h(k−1)`, `h(l) = 0`, solved by
/// Thomas elimination.
fn hitting_oracle(n: usize, l: usize) -> f64 {
    let nf = n as f64;
    let down = |k: usize| k as f64 / nf;
    let up = |k: usize| 1.0 - k as f64 / nf;
    // Unknowns h(0..l); row k: −down h(k−1) + h(k) − up h(k+1) = 1.
    let mut c = vec![0.0; l];
    let mut d = vec![0.0; l];
    for k in 0..l {
        let a = if k == 0 { 0.0 } else { -down(k) };
        let b = 1.0;
        let cu = if k + 1 < l { -up(k) } else { 0.0 };
        let denom = b - a * if k == 0 { 0.0 } else { c[k - 1] };
        c[k] = cu / denom;
        d[k] = (1.0 - a * if k == 0 { 0.0 } else { d[k - 1] }) / denom;
    }
    let mut h = vec![0.0; l];
    for k in (0..l).rev() {
        h[k] = d[k] - if k + 1 < l { c[k] * h[k + 1] } else { 0.0 };
    }
    h[l - 1]
}

fn criterion_1() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut bound_failures = 0;
    for n in 1..=50 {
        let chain = EhrenfestChain::new(n)?;
        for l in 1..=n {
            let got = chain.expected_hitting_adjacent(l)?;
            let want = hitting_oracle(n, l);
            worst = worst.max((got - want).abs() / want.abs());
        }
        for d in (1..n).filter(|d| 2 * d < n) {
            if chain.expected_hitting_from_zero(d)? > chain.hitting_bound(d)? {
                bound_failures += 1;
            }
        }
    }
    Ok((
        worst <= 1e-10 && bound_failures == 0,
        format!("max relative error {worst:.3e}, bound violations {bound_failures}"),
    ))
}

fn criterion_2() -> Outcome {
    let check = distance_process_check(6, 20, 100_000, 2)?;
    Ok((check.max_tv <= 0.01, format!("max TV {:.5}", check.max_tv)))
}

/// Transition matrix of simple random walk on `{0,1}^n` encoded as bitmasks.
fn hypercube_matrix(n: usize) -> Vec<Vec<f64>> {
    let size = 1 << n;
    let mut m = vec![vec![0.0; size]; size];
    for (x, row) in m.iter_mut().enumerate() {
        for i in 0..n {
            row[x ^ (1 << i)] += 1.0 / n as f64;
        }
    }
    m
}

fn mat_mul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let size = a.len();
    let mut out = vec![vec![0.0; size]; size];
    for i in 0..size {
        for k in 0..size {
            let aik = a[i][k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..size {
                out[i][j] += aik * b[k][j];
            }
        }
    }
    out
}

fn criterion_3() -> Outcome {
    let mut worst_ratio: f64 = 0.0;
    let mut ok = true;
    for n in 3..=6 {
        let theta = 3 * n * n;
        let p = hypercube_matrix(n);
        let size = 1usize << n;
        let pi = 1.0 / size as f64;
        let mut power = p.clone();
        for _ in 1..theta {
            power = mat_mul(&power, &p);
        }
        for i in 0..=2 {
            let first = power.clone();
            let second = mat_mul(&power, &p);
            let mut dev: f64 = 0.0;
            for x in 0..size {
                for y in 0..size {
                    let joint = pi * (first[x][y] + second[x][y]);
                    dev = dev.max((joint - 2.0 * pi * pi).abs());
                }
            }
            let bound = 2f64.powi(1 - 3 * n as i32);
            ok &= dev <= bound;
            worst_ratio = worst_ratio.max(dev / bound);
            if i < 2 {
                power = second;
            }
        }
        let lib = mixing_check(n, theta, &[0, 1, 2])?;
        ok &= lib.passes();
    }
    Ok((ok, format!("max deviation / bound {worst_ratio:.3e}")))
}

fn criterion_4() -> Outcome {
    let n = 8;
    let draws = 100_000;
    let x = SpinState::all_up(n);
    let mut ok = true;
    let mut parts = Vec::new();
    for p in [2usize, 3] {
        for d in [0usize, 1, 4, 8] {
            let mut y = x.clone();
            for i in 0..d {
                y.flip(i);
            }
            let r = 1.0 - 2.0 * d as f64 / n as f64;
            let target = n as f64 * r.powi(p as i32);
            let acc = replicate(11 + p as u64, "covariance", draws, |_, i| {
                let inst = PSpinInstance::build(n, p, i).expect("size within budget");
                inst.hamiltonian(&x) * inst.hamiltonian(&y)
            });
            let e = acc.estimate();
            let within = e.within(target, 3.0);
            ok &= within;
            parts.push(format!("p={p} d={d}: {:.3}±{:.3} vs {target:.3}", e.value, e.se));
        }
    }
    Ok((ok, parts.join("; ")))
}

fn criterion_5() -> Outcome {
    let k = 4.0;
    let m = TailMeasure::pareto(k)?;
    let ts = [0.5, 1.0, 2.0];
    let samples = replicate_collect(5, "ppp-acceptance", 100_000, |rng, _| {
        let pts = sample_poisson_points(&m, 2.0, 0.05, rng).expect("valid window");
        ts.map(|t| sup_path(&pts, t, 0.05))
    });
    let threshold = ks_threshold(samples.len(), 0.01)?;
    let mut ok = true;
    let mut parts = Vec::new();
    for (j, &t) in ts.iter().enumerate() {
        let emp = EmpiricalDistribution::new(samples.iter().map(|s| s[j]).collect())?;
        let d = ks_statistic(&emp, |u| if u <= 0.0 { 0.0 } else { (-t * k / u).exp() })?;
        ok &= d < threshold;
        parts.push(format!("t={t}: D={d:.5}"));
    }
    Ok((ok, format!("{} (threshold {threshold:.5})", parts.join(", "))))
}

fn criterion_6() -> Outcome {
    let m = TailMeasure::pareto(4.0)?;
    let mut ok = true;
    let mut parts = Vec::new();
    for (t, s) in [(1.0, 1.0), (1.0, 3.0), (2.0, 1.0)] {
        let e = estimate_range_avoidance(&m, t, s, 0.05, 100_000, 6)?;
        let target = t / (t + s);
        ok &= e.within(target, 3.0) && e.se <= 0.005;
        parts.push(format!("({t},{s}): {:.4}±{:.4} vs {target:.4}", e.value, e.se));
    }
    Ok((ok, parts.join("; ")))
}

fn criterion_7() -> Outcome {
    let (n, p, c, beta) = (16, 2, 0.25, 1.0);
    let sk = make_schedule(n, p, c, beta)?;
    let inst = PSpinInstance::build(n, p, 7)?;
    let model = SkModel::new(&inst, beta);
    let mut ok = true;
    let mut parts = Vec::new();
    for delta in [0.5, 1.0, 2.0] {
        let m = condition31_estimate(&model, &sk.schedule, delta, 100_000, 70)?;
        let bound = condition31_bound(delta, sk.gamma, beta);
        ok &= m.estimate.value <= bound + 3.0 * m.estimate.se;
        parts.push(format!("δ={delta}: {:.3}±{:.3} ≤ {bound:.3}", m.estimate.value, m.estimate.se));
    }
    Ok((ok, parts.join("; ")))
}

fn criterion_8() -> Outcome {
    let (n, p, beta) = (16, 2, 1.0);
    let sk = make_schedule(n, p, 0.25, beta)?;
    let s = &sk.schedule;
    let inst = PSpinInstance::build(n, p, 8)?;
    let model = SkModel::new(&inst, beta);
    // Long enough for two complete blocks.
    let t = 2.5 * s.theta_n as f64 / s.a_n;
    let steps = s.jumps(t);
    let jensen = replicate_collect(80, "sandwich", 10_000, |rng, _| {
        let traj = simulate_trajectory(&model, steps, rng)?;
        jensen_sandwich_check(&traj, s, t)
    })
    .into_iter()
    .collect::<Result<Vec<bool>, _>>()?;
    let jensen_violations = jensen.iter().filter(|ok| !**ok).count();
    let profile = tail_profile(
        &model,
        s,
        &[0.5, 1.0, 2.0, 8.0, 64.0],
        |rng| model.sample_invariant(rng),
        10_000,
        81,
    )?;
    Ok((
        jensen_violations == 0 && profile.sandwich_violations == 0,
        format!(
            "Jensen violations {jensen_violations}/10000 (k_n = {}), indicator violations {}/{}",
            s.blocks(t),
            profile.sandwich_violations,
            profile.paths
        ),
    ))
}

/// `P(max(X,Y) ≤ s)` for a standard bivariate normal pair, as
/// `∫_{−∞}^{s} φ(x) Φ((s − ρx)/√(1−ρ²)) dx` by composite Simpson.
fn bivariate_oracle(rho: f64, s: f64) -> f64 {
    let normal = Normal::standard();
    let f = |x: f64| normal.pdf(x) * normal.cdf((s - rho * x) / (1.0 - rho * rho).sqrt());
    let (a, b) = (-12.0, s);
    let m = 20_000;
    let h = (b - a) / m as f64;
    let mut total = f(a) + f(b);
    for i in 1..m {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        total += w * f(a + i as f64 * h);
    }
    total * h / 3.0
}

fn criterion_9() -> Outcome {
    let levels = [0.5, 1.0, 2.0];
    let mut violations = 0;
    let mut ordering = 0;
    let mut checked = 0;
    for i in 0..50u64 {
        let size = 2 + (i % 5) as usize;
        let mut rng = replica_rng(9, "acceptance-pairs", i);
        let (d0, d1) = random_comparison_pair(size, &mut rng);
        if d0.iter().zip(d1.iter()).any(|(a, b)| a < b) {
            ordering += 1;
        }
        for (j, &s) in levels.iter().enumerate() {
            let seed = 1000 * i + j as u64;
            let p0 = max_cdf_mc(&d0, s, 100_000, seed)?;
            let p1 = max_cdf_mc(&d1, s, 100_000, seed + 500_000)?;
            let se = (p0.se * p0.se + p1.se * p1.se).sqrt();
            let rhs = gaussian_comparison_rhs(&d0, &d1, s)?;
            checked += 1;
            if p0.value - p1.value > rhs + 3.0 * se {
                violations += 1;
            }
        }
    }
    let mut worst_2x2: f64 = 0.0;
    let mut exact_ok = true;
    for &rho in &[-0.7, -0.3, 0.2, 0.5, 0.9] {
        for &s in &[-1.0, 0.0, 0.5, 1.0, 2.0] {
            worst_2x2 = worst_2x2.max((bivariate_max_cdf(rho, s)? - bivariate_oracle(rho, s)).abs());
        }
    }
    for &s in &levels {
        let d0 = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let d1 = DMatrix::<f64>::identity(2, 2);
        let lhs = bivariate_oracle(0.5, s) - bivariate_oracle(0.0, s);
        exact_ok &= lhs <= gaussian_comparison_rhs(&d0, &d1, s)?;
    }
    Ok((
        violations == 0 && ordering == 0 && worst_2x2 <= 1e-6 && exact_ok,
        format!(
            "{violations}/{checked} MC violations, {ordering} unordered pairs, 2x2 max error {worst_2x2:.2e}"
        ),
    ))
}

fn criterion_10() -> Outcome {
    let dir = tempfile::tempdir()?;
    let config = ExperimentConfig::default();
    let mut lines = Vec::new();
    let mut ok = true;
    for command in [Command::Verify, Command::Ageing, Command::Variance] {
        let out = dir.path().join(command.name());
        let results = run(command, &config, &out)?;
        for t in &results.trends {
            ok &= t.acceptable();
            let state = if t.monotone { "monotone" } else { "flagged" };
            lines.push(format!("{} [{state}]", t.name));
        }
    }
    Ok((ok, format!("{} trends: {}", lines.len(), lines.join("; "))))
}

fn toy() -> (RandomHopping<CompleteGraph, TabulatedEnvironment>, ScalingSchedule) {
    let dynamics = RandomHopping::new(
        CompleteGraph::new(2).expect("two states"),
        TabulatedEnvironment {
            tau: vec![1.0, 1.0],
            constant: 1.0,
        },
    );
    let sched = ScalingSchedule::new(1, 10.0, 0.0, 1, 1.0, 1).expect("valid toy schedule");
    (dynamics, sched)
}

fn criterion_11() -> Outcome {
    let (dynamics, sched) = toy();
    let reps = 100_000;
    let q = q_tail(&dynamics, &sched, &0, 1.0, reps, 111)?;
    let nu = nu_t(&dynamics, &sched, 1.0, 1.0, reps, 112)?;
    let sigma = sigma_sq_t(&dynamics, &sched, 1.0, 1.0, reps, 1, 113)?;
    let targets = [(-0.5f64).exp(), 10.0 * (-0.5f64).exp(), 10.0 * (-1.0f64).exp()];
    let got = [q, nu.value, sigma.value];
    let ok = got.iter().zip(targets).all(|(e, t)| e.within(t, 3.0));
    let parts: Vec<String> = got
        .iter()
        .zip(targets)
        .map(|(e, t)| format!("{:.4}±{:.4} vs {t:.4}", e.value, e.se))
        .collect();
    Ok((ok, parts.join("; ")))
}

fn numeric_content(dir: &Path) -> Result<Value, Box<dyn std::error::Error>> {
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("results.json"))?)?;
    let obj = v.as_object_mut().ok_or("results.json is not an object")?;
    obj.remove("timestamp");
    obj.remove("runtime-seconds");
    Ok(v)
}

fn criterion_12() -> Outcome {
    let dir = tempfile::tempdir()?;
    let config = dir.path().join("config.json");
    std::fs::write(&config, r#"{"replicas": 2000, "n_grid": [8, 12], "seed": 12}"#)?;
    let mut contents = Vec::new();
    for (label, threads) in [("a", 1), ("b", 1), ("c", 8)] {
        let out = dir.path().join(label);
        let status = Process::new(env!("CARGO_BIN_EXE_extremal-clock"))
            .args(["verify", "--threads", &threads.to_string(), "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .env("RUST_LOG", "error")
            .status()?;
        if !status.success() {
            return Ok((false, format!("run {label} exited with {status}")));
        }
        let csv = std::fs::read(out.join("conditions.csv"))?;
        contents.push((numeric_content(&out)?, csv));
    }
    let same = contents.windows(2).all(|w| w[0] == w[1]);
    Ok((same, "results.json and conditions.csv identical at 1, 1 and 8 threads".into()))
}

type Criterion = (&'static str, fn() -> Outcome, Duration);

fn main() {
    let criteria: [Criterion; 12] = [
        ("1 Ehrenfest hitting formulas", criterion_1, Duration::from_secs(1)),
        ("2 distance-process identity", criterion_2, Duration::from_secs(30)),
        ("3 exact mixing bound", criterion_3, Duration::from_secs(5)),
        ("4 Hamiltonian covariance", criterion_4, Duration::from_secs(120)),
        ("5 extremal process from PPP", criterion_5, Duration::from_secs(60)),
        ("6 range-avoidance law", criterion_6, Duration::from_secs(60)),
        ("7 truncated first-moment bound", criterion_7, Duration::from_secs(60)),
        ("8 sandwich inequalities", criterion_8, Duration::from_secs(60)),
        ("9 Gaussian comparison", criterion_9, Duration::from_secs(120)),
        ("10 trend suites", criterion_10, Duration::from_secs(1800)),
        ("11 toy-chain oracles", criterion_11, Duration::from_secs(10)),
        ("12 determinism", criterion_12, Duration::from_secs(600)),
    ];
    let mut failed = 0;
    for (name, f, limit) in criteria {
        let start = Instant::now();
        let (pass, detail) = match f() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        let elapsed = start.elapsed();
        let in_time = elapsed <= limit;
        let verdict = if pass && in_time { "PASS" } else { "FAIL" };
        if verdict == "FAIL" {
            failed += 1;
        }
        println!(
            "criterion {name}: {verdict} [{:.2}s of {}s] {detail}",
            elapsed.as_secs_f64(),
            limit.as_secs()
        );
    }
    println!("acceptance: {} of 12 criteria passed", 12 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
