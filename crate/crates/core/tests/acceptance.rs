//! Release gates for the statistical engine, one test per gate.
//!
//! Each test prints a single `acceptance NN: pass/skip` line, so running
//! `cargo test --test acceptance -- --nocapture` reads as a checklist.
//! The numerical gates compare against independently coded oracles (a
//! plain Newton maximiser, naive double loops) or against the known
//! parameters of a generating model; two gates need real observational
//! data and report a skip when none is supplied through the environment.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, resume_unwind, AssertUnwindSafe};
use std::time::Instant;

use chrono::{Datelike, NaiveDate};
use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;

use climort::attribution::{
    backward_attribution, classify_days, day_mask, exposure_adjustment, forward_attribution,
    log_rr_series, uniform_year_weights, DayClass, DaySelection,
};
use climort::basis::{CrossBasisDef, CrossBasisSpec, SplineSpec};
use climort::data::{
    aggregate_stations, empirical_quantile, quantile_of_sorted, AgeBucketScheme,
    AnnualMortalityData, AnnualMortalitySurface, DailyStratumSeries, DailyTemperatureSeries,
    Gender,
};
use climort::dlnm::{self, temperature_quantiles, DlnmConfig};
use climort::forecast::{death_probability, life_expectancy};
use climort::glm::fit_poisson_irls;
use climort::heatwave::{detect, exceedance_thresholds, HeatwaveThresholds, DEFAULT_REFERENCE};
use climort::io::{load_daily_deaths, load_station_temperatures};
use climort::lilee::{self, ExposureAdjustment, FitOptions, LiLeeFit};
use climort::rng::{stream, Namespace};
use climort::synth::{self, true_cumulative_log_rr, SynthConfig};
use climort::timeseries::{self, simulate_paths, TrendModel, AR_BOUNDARY_GAP};

/// Runs one gate and prints its outcome line; failures re-raise the panic
/// so the harness still reports the assertion.
fn gate(number: u32, body: impl FnOnce() -> String) {
    let start = Instant::now();
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(message) => println!("acceptance {number:02}: {message} [{:.2?}]", start.elapsed()),
        Err(cause) => {
            println!("acceptance {number:02}: FAIL");
            resume_unwind(cause);
        }
    }
}

fn dates_from(year: i32, month: u32, day: u32, len: usize) -> Vec<NaiveDate> {
    let start = NaiveDate::from_ymd_opt(year, month, day).expect("valid date");
    (0..len)
        .map(|i| start + chrono::Duration::days(i as i64))
        .collect()
}

/// Maximises the Poisson log likelihood directly: full Newton steps on the
/// gradient `X'(y - mu)` with Hessian `X' diag(mu) X`, iterated from zero
/// until the gradient vanishes. Deliberately shares no code with the
/// reweighted-least-squares path under test.
fn newton_poisson(design: &DMatrix<f64>, counts: &[f64], offset: &[f64]) -> DVector<f64> {
    let (n, p) = design.shape();
    let mut beta = DVector::zeros(p);
    for _ in 0..200 {
        let mut mu = DVector::zeros(n);
        for i in 0..n {
            let mut eta = offset[i];
            for j in 0..p {
                eta += design[(i, j)] * beta[j];
            }
            mu[i] = eta.exp();
        }
        let resid = DVector::from_fn(n, |i, _| counts[i] - mu[i]);
        let grad = design.transpose() * &resid;
        if grad.amax() < 1e-12 {
            break;
        }
        let mut hess = DMatrix::zeros(p, p);
        for i in 0..n {
            for a in 0..p {
                for b in 0..p {
                    hess[(a, b)] += mu[i] * design[(i, a)] * design[(i, b)];
                }
            }
        }
        let step = hess.lu().solve(&grad).expect("information matrix is invertible");
        beta += step;
    }
    beta
}

#[test]
fn c01_poisson_fit_matches_an_independent_newton_solver() {
    gate(1, || {
        let start = Instant::now();
        for case in 0..20u64 {
            let p = 2 + (case as usize) % 3;
            let n = 30;
            let mut rng = ChaCha8Rng::seed_from_u64(4100 + case);
            let design = DMatrix::from_fn(n, p, |_, j| {
                if j == 0 {
                    1.0
                } else {
                    rng.random_range(-1.0..1.0)
                }
            });
            let beta_true: Vec<f64> = (0..p).map(|_| rng.random_range(-0.5..0.5)).collect();
            let offset: Vec<f64> = (0..n).map(|_| rng.random_range(-0.2..0.2)).collect();
            let counts: Vec<f64> = (0..n)
                .map(|i| {
                    let mut eta = offset[i];
                    for j in 0..p {
                        eta += design[(i, j)] * beta_true[j];
                    }
                    Poisson::new(eta.exp()).expect("positive mean").sample(&mut rng)
                })
                .collect();
            let fit = fit_poisson_irls(&design, &counts, &offset).expect("fit converges");
            let oracle = newton_poisson(&design, &counts, &offset);
            for j in 0..p {
                let diff = (fit.coefficients[j] - oracle[j]).abs();
                assert!(
                    diff <= 1e-8,
                    "dataset {case}, coefficient {j}: {} vs oracle {} (diff {diff:.3e})",
                    fit.coefficients[j],
                    oracle[j]
                );
            }
        }
        let elapsed = start.elapsed();
        assert!(elapsed.as_secs_f64() < 1.0, "20 oracle comparisons took {elapsed:?}");
        "pass - fitted coefficients match the Newton oracle within 1e-8 on 20 datasets".to_string()
    });
}

#[test]
fn c02_cross_basis_matches_naive_double_loops() {
    gate(2, || {
        let mut rng = ChaCha8Rng::seed_from_u64(4200);
        let n = 60;
        let max_lag = 21usize;
        let temps: Vec<f64> = (0..n)
            .map(|d| {
                12.0 + 8.0 * (d as f64 / 9.0).sin() + 2.5 * rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        let lo = temps.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = temps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let knots = vec![
            empirical_quantile(&temps, 0.10).unwrap(),
            empirical_quantile(&temps, 0.75).unwrap(),
            empirical_quantile(&temps, 0.90).unwrap(),
        ];
        let var = SplineSpec::new(knots, (lo, hi), false).unwrap();
        let spec = CrossBasisSpec::with_log_lag_knots(var, max_lag, 3).unwrap();
        let def = CrossBasisDef::new(spec).unwrap();
        let built = def.build(&temps).unwrap();

        let var_b = def.var_basis();
        let lag_b = def.lag_basis();
        let (jv, jl) = (var_b.dim(), lag_b.dim());
        assert_eq!(built.valid_from, max_lag);
        assert_eq!(built.matrix.ncols(), jv * jl);
        for d in 0..n {
            for j in 0..jv {
                for k in 0..jl {
                    let col = j * jl + k;
                    if d < max_lag {
                        assert!(built.matrix[(d, col)].is_nan(), "warm-up row {d} must be NaN");
                        continue;
                    }
                    let mut naive = 0.0;
                    for l in 0..=max_lag {
                        naive += var_b.eval(temps[d - l])[j] * lag_b.eval(l as f64)[k];
                    }
                    let diff = (built.matrix[(d, col)] - naive).abs();
                    assert!(
                        diff <= 1e-10,
                        "row {d} column {col}: {} vs naive {naive} (diff {diff:.3e})",
                        built.matrix[(d, col)]
                    );
                }
            }
        }

        // cumulative curve versus the same marginal evaluations summed by hand
        let theta = DVector::from_fn(jv * jl, |_, _| rng.random_range(-0.5..0.5));
        let reference = empirical_quantile(&temps, 0.5).unwrap();
        let grid: Vec<f64> = (0..=40).map(|i| lo + (hi - lo) * i as f64 / 40.0).collect();
        let curve = def.cumulative_curve(&theta, &grid, reference).unwrap();
        let lag_totals: Vec<f64> = (0..jl)
            .map(|k| (0..=max_lag).map(|l| lag_b.eval(l as f64)[k]).sum())
            .collect();
        let r_ref = var_b.eval(reference);
        for (value, &t) in curve.iter().zip(&grid) {
            let r_t = var_b.eval(t);
            let mut naive = 0.0;
            for j in 0..jv {
                for k in 0..jl {
                    naive += theta[j * jl + k] * (r_t[j] - r_ref[j]) * lag_totals[k];
                }
            }
            let diff = (value - naive).abs();
            assert!(diff <= 1e-10, "curve at {t}: {value} vs naive {naive} (diff {diff:.3e})");
        }
        "pass - all cross-basis entries and curve values match the naive loops within 1e-10"
            .to_string()
    });
}

#[test]
fn c03_recovers_the_generating_temperature_response() {
    gate(3, || {
        let start = Instant::now();
        // the generating response varies by under 1% within two degrees of
        // its minimum, so the recovered location wobbles by about a degree
        // across reseeds; this frozen seed is a representative instance
        let data = synth::generate(&SynthConfig::default(), 20260829).expect("synthetic data");
        // pool the strata: they share one generating response, and summing
        // independent Poisson counts preserves the model while boosting the
        // daily totals to a scale where the curve is tightly identified
        let dates = data.strata[0].dates.clone();
        let mut summed = vec![0u32; dates.len()];
        for s in &data.strata {
            for (acc, d) in summed.iter_mut().zip(&s.deaths) {
                *acc += *d;
            }
        }
        let pooled =
            DailyStratumSeries::new(Gender::Female, 0, "pooled".to_string(), dates, summed)
                .unwrap();
        let model = dlnm::fit(&data.national, &[pooled], &DlnmConfig::default()).expect("fit");
        let stratum = &model.strata[0];
        assert!(
            (stratum.mmt - data.truth.mmt).abs() <= 1.0,
            "minimum-mortality temperature {} is more than 1 degree from the generating {}",
            stratum.mmt,
            data.truth.mmt
        );

        let q = &model.quantiles;
        let steps = ((q.p99 - q.p01) / 0.1).floor() as usize;
        let grid: Vec<f64> = (0..=steps).map(|i| q.p01 + 0.1 * i as f64).collect();
        let points = dlnm::relative_risk(
            &model.def,
            &stratum.cross_coefficients(),
            &stratum.cross_covariance(),
            stratum.mmt,
            &grid,
        )
        .unwrap();
        let g_ref = true_cumulative_log_rr(&data.truth, stratum.mmt);
        let covered = points
            .iter()
            .filter(|pt| {
                let truth = true_cumulative_log_rr(&data.truth, pt.temperature) - g_ref;
                (pt.log_rr - truth).abs() <= 1.96 * pt.se
            })
            .count();
        let fraction = covered as f64 / points.len() as f64;
        assert!(
            fraction >= 0.90,
            "generating curve inside the 95% interval at only {covered}/{} grid points",
            points.len()
        );
        let elapsed = start.elapsed();
        assert!(elapsed.as_secs_f64() < 30.0, "recovery took {elapsed:?}");
        format!(
            "pass - minimum at {:.1} (truth {:.1}), curve covered at {covered}/{} grid points",
            stratum.mmt,
            data.truth.mmt,
            points.len()
        )
    });
}

#[test]
fn c04_attributed_fractions_decompose_and_close_forms_hold() {
    gate(4, || {
        let mut rng = ChaCha8Rng::seed_from_u64(4400);
        let n = 365;
        let dates = dates_from(2001, 1, 1, n);
        let temps: Vec<f64> = (0..n)
            .map(|d| {
                13.0 + 9.0 * ((d as f64 - 30.0) / 58.1).sin()
                    + 3.0 * rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        let quantiles = temperature_quantiles(&temps).unwrap();
        let classes = classify_days(&temps, 16.0, &quantiles);
        let log_rr: Vec<f64> = (0..n).map(|_| rng.random_range(-0.3..0.5)).collect();
        let deaths: Vec<f64> = (0..n).map(|_| rng.random_range(40.0..160.0)).collect();
        let weights = uniform_year_weights(&dates);

        let all = day_mask(&DaySelection::All, &dates, &classes).unwrap();
        let class_masks: Vec<Vec<bool>> = [
            DayClass::ExtremeCold,
            DayClass::ModerateCold,
            DayClass::None,
            DayClass::ModerateHot,
            DayClass::ExtremeHot,
        ]
        .iter()
        .map(|c| day_mask(&DaySelection::Class(*c), &dates, &classes).unwrap())
        .collect();

        let backward_all = backward_attribution(&log_rr, &deaths, &all).unwrap();
        let backward_sum: f64 = class_masks
            .iter()
            .map(|m| backward_attribution(&log_rr, &deaths, m).unwrap().fraction)
            .sum();
        assert!(
            (backward_all.fraction - backward_sum).abs() <= 1e-9,
            "backward fractions: classes sum to {backward_sum}, all days give {}",
            backward_all.fraction
        );

        let forward_all = forward_attribution(&log_rr, &weights, &all).unwrap();
        let forward_sum: f64 = class_masks
            .iter()
            .map(|m| forward_attribution(&log_rr, &weights, m).unwrap())
            .sum();
        assert!(
            (forward_all - forward_sum).abs() <= 1e-9,
            "forward fractions: classes sum to {forward_sum}, all days give {forward_all}"
        );

        // a flat response attributes nothing, exactly
        let zero = vec![0.0; n];
        assert_eq!(backward_attribution(&zero, &deaths, &all).unwrap().fraction, 0.0);
        assert_eq!(forward_attribution(&zero, &weights, &all).unwrap(), 0.0);

        // one selected day at doubled risk carries exactly its 1/365 weight
        let mut single = vec![false; n];
        single[200] = true;
        let mut one_day = vec![0.0; n];
        one_day[200] = 2.0f64.ln();
        let theta = forward_attribution(&one_day, &weights, &single).unwrap();
        assert_eq!(theta, 1.0 / 365.0);

        "pass - class decomposition additive within 1e-9, zero response and 1/365 forms exact"
            .to_string()
    });
}

#[test]
fn c05_two_population_fit_is_constrained_and_recovers_noiseless_surfaces() {
    gate(5, || {
        let nx = 106usize;
        let nt = 25usize;
        let ages: Vec<u16> = (0..nx as u16).collect();
        let years: Vec<i32> = (1990..1990 + nt as i32).collect();

        // a shared bilinear trend (centred index, unit-norm loading), gender
        // offsets varying with age, and time-constant exposures: the
        // aggregate surface then stays exactly bilinear with the same
        // loading and index, so the two-step fit can reproduce it perfectly
        let raw: Vec<f64> = (0..nx).map(|x| 1.0 + 0.5 * (x as f64 / 15.0).sin()).collect();
        let norm = raw.iter().map(|b| b * b).sum::<f64>().sqrt();
        let loading: Vec<f64> = raw.iter().map(|b| b / norm).collect();
        let level: Vec<f64> = (0..nx).map(|x| -8.0 + 0.07 * x as f64).collect();
        let t_bar = (nt as f64 - 1.0) / 2.0;
        let index: Vec<f64> = (0..nt).map(|t| -0.4 * (t as f64 - t_bar)).collect();
        let offset_f: Vec<f64> = (0..nx).map(|x| -0.15 + 0.001 * x as f64).collect();
        let offset_m: Vec<f64> = (0..nx).map(|x| 0.12 - 0.0005 * x as f64).collect();

        let exp_f = DMatrix::from_fn(nx, nt, |i, _| 60_000.0 - 300.0 * i as f64);
        let exp_m = DMatrix::from_fn(nx, nt, |i, _| 55_000.0 - 250.0 * i as f64);
        let rate = |off: &[f64], i: usize, j: usize| (level[i] + loading[i] * index[j] + off[i]).exp();
        let deaths_f = DMatrix::from_fn(nx, nt, |i, j| exp_f[(i, j)] * rate(&offset_f, i, j));
        let deaths_m = DMatrix::from_fn(nx, nt, |i, j| exp_m[(i, j)] * rate(&offset_m, i, j));

        let data = AnnualMortalityData {
            female: AnnualMortalitySurface {
                ages: ages.clone(),
                years: years.clone(),
                deaths: deaths_f.clone(),
                exposures: exp_f.clone(),
            },
            male: AnnualMortalitySurface {
                ages,
                years,
                deaths: deaths_m.clone(),
                exposures: exp_m.clone(),
            },
        };

        let options = FitOptions { tol: 1e-13, max_sweeps: 50_000 };
        let fit = lilee::fit(&data, None, &options).expect("noiseless fit");
        assert!(
            fit.constraint_residuals().max() < 1e-10,
            "identification residual {:.3e}",
            fit.constraint_residuals().max()
        );

        for (gender, deaths, exposures) in
            [(Gender::Female, &deaths_f, &exp_f), (Gender::Male, &deaths_m, &exp_m)]
        {
            let fitted = fit.rate_surface(gender);
            for i in 0..nx {
                for j in 0..nt {
                    let truth = deaths[(i, j)] / exposures[(i, j)];
                    let rel = (fitted[(i, j)] - truth).abs() / truth;
                    assert!(
                        rel <= 1e-5,
                        "{gender:?} rate at age {i}, year {j}: {} vs {truth} (rel {rel:.3e})",
                        fitted[(i, j)]
                    );
                }
            }
        }

        // the shared factors are identified up to a joint sign flip
        let align = if fit
            .common
            .loading
            .iter()
            .zip(&loading)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            >= 0.0
        {
            1.0
        } else {
            -1.0
        };
        for (got, want) in fit.common.loading.iter().zip(&loading) {
            assert!((align * got - want).abs() <= 1e-5, "loading {got} vs {want}");
        }
        for (got, want) in fit.common.index.iter().zip(&index) {
            assert!((align * got - want).abs() <= 1e-4, "index {got} vs {want}");
        }

        // multiplying every exposure by one must not change a single bit
        let unit = ExposureAdjustment {
            female: DMatrix::from_element(nx, nt, 1.0),
            male: DMatrix::from_element(nx, nt, 1.0),
        };
        let adjusted = lilee::fit(&data, Some(&unit), &options).expect("unit-adjusted fit");
        assert!(adjusted.constraint_residuals().max() < 1e-10);
        assert_eq!(fit, adjusted, "unit exposure adjustment changed the fit");

        "pass - residuals below 1e-10, noiseless surfaces recovered within 1e-5, unit adjustment bit-identical"
            .to_string()
    });
}

fn relative_error(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs()
}

#[test]
fn c06_trend_dynamics_recovered_at_scale_and_bounded_on_explosive_input() {
    gate(6, || {
        let truth = TrendModel {
            intercepts: [-1.1, 1.0, -0.8],
            ar_female: 0.5,
            ar_male: 0.45,
            noise_cov: [[0.36, 0.10, 0.05], [0.10, 0.25, 0.04], [0.05, 0.04, 0.16]],
        };
        let horizon = 10_000;
        let y0 = Vector3::new(5.0, 2.0, -1.5);
        let path = simulate_paths(&truth, &y0, horizon, 1, 4600).unwrap().pop().unwrap();
        let mut k = vec![y0[0]];
        let mut kf = vec![y0[1]];
        let mut km = vec![y0[2]];
        for t in 0..horizon {
            k.push(path[(0, t)]);
            kf.push(path[(1, t)]);
            km.push(path[(2, t)]);
        }
        let fitted = timeseries::fit(&k, &kf, &km).expect("long-series fit");

        for (name, got, want) in [
            ("drift", fitted.intercepts[0], truth.intercepts[0]),
            ("female intercept", fitted.intercepts[1], truth.intercepts[1]),
            ("male intercept", fitted.intercepts[2], truth.intercepts[2]),
            ("female AR", fitted.ar_female, truth.ar_female),
            ("male AR", fitted.ar_male, truth.ar_male),
        ] {
            let rel = relative_error(got, want);
            assert!(rel <= 0.05, "{name}: {got} vs {want} (rel {rel:.3})");
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                num += (fitted.noise_cov[i][j] - truth.noise_cov[i][j]).powi(2);
                den += truth.noise_cov[i][j].powi(2);
            }
        }
        let frob = (num / den).sqrt();
        assert!(frob <= 0.10, "innovation covariance off by {frob:.3} in Frobenius norm");

        // a geometrically growing deviation must saturate at the stationarity
        // boundary instead of failing
        let n = 240;
        let mut rng = stream(4601, Namespace::Synthetic, 0);
        let mut value: f64 = 0.1;
        let explosive: Vec<f64> = (0..n)
            .map(|_| {
                value = 1.05 * value + 0.01 * rng.sample::<f64, _>(StandardNormal);
                value
            })
            .collect();
        let walk: Vec<f64> = (0..n).map(|t| -0.5 * t as f64 + (t % 7) as f64 * 0.02).collect();
        let tame: Vec<f64> = (0..n).map(|t| 0.4 * ((t * 5 % 13) as f64 / 13.0 - 0.5)).collect();
        let boundary = timeseries::fit(&walk, &explosive, &tame).expect("explosive input still fits");
        assert!(
            (boundary.ar_female - (1.0 - AR_BOUNDARY_GAP)).abs() < 1e-9,
            "explosive AR stopped at {} instead of the boundary",
            boundary.ar_female
        );
        assert!(boundary.ar_male.abs() < 1.0 - AR_BOUNDARY_GAP);

        format!(
            "pass - parameters within 5% at T=10000 (covariance {:.1}% off in Frobenius norm), explosive series saturates at {:.6}",
            100.0 * frob,
            boundary.ar_female
        )
    });
}

/// Age-wise level and loading vectors for both genders plus a flat exposure,
/// mapping a `(K, kappa_f, kappa_m)` state to total expected deaths.
struct RateMap {
    common_level: Vec<f64>,
    common_load: Vec<f64>,
    female_level: Vec<f64>,
    female_load: Vec<f64>,
    male_level: Vec<f64>,
    male_load: Vec<f64>,
    exposure: f64,
}

impl RateMap {
    fn from_fit(fit: &LiLeeFit, exposure: f64) -> Self {
        Self {
            common_level: fit.common.level.clone(),
            common_load: fit.common.loading.clone(),
            female_level: fit.female.level.clone(),
            female_load: fit.female.loading.clone(),
            male_level: fit.male.level.clone(),
            male_load: fit.male.loading.clone(),
            exposure,
        }
    }

    fn gender_deaths(&self, level: &[f64], load: &[f64], k: f64, kg: f64) -> f64 {
        self.common_level
            .iter()
            .zip(&self.common_load)
            .zip(level.iter().zip(load))
            .map(|((a, b), (ag, bg))| self.exposure * (a + b * k + ag + bg * kg).exp())
            .sum()
    }

    fn total_deaths(&self, y: &Vector3<f64>) -> f64 {
        self.gender_deaths(&self.female_level, &self.female_load, y[0], y[1])
            + self.gender_deaths(&self.male_level, &self.male_load, y[0], y[2])
    }
}

#[test]
fn c07_projection_bands_cover_generated_futures_and_gender_gap_stays_bounded() {
    gate(7, || {
        let nx = 106usize;
        let n_hist = 60usize;
        let exposure = 500_000.0;
        let truth_trend = TrendModel {
            intercepts: [-0.45, 0.01, -0.01],
            ar_female: 0.6,
            ar_male: 0.5,
            noise_cov: [
                [0.09, 0.010, 0.008],
                [0.010, 0.04, 0.005],
                [0.008, 0.005, 0.0225],
            ],
        };
        let b = 1.0 / (nx as f64).sqrt();
        let truth_map = RateMap {
            common_level: (0..nx).map(|x| -7.7 + 0.06 * x as f64).collect(),
            common_load: vec![b; nx],
            female_level: vec![-0.08; nx],
            female_load: vec![b; nx],
            male_level: vec![0.08; nx],
            male_load: vec![b; nx],
            exposure,
        };
        let y0 = Vector3::new(13.5, 0.0, 0.0);
        let options = FitOptions { tol: 1e-8, max_sweeps: 20_000 };

        let covered: usize = (0..100u64)
            .into_par_iter()
            .map(|rep| {
                // one simulated history of the indices under the generating
                // dynamics, with Poisson death surfaces at the implied rates
                let hist = simulate_paths(&truth_trend, &y0, n_hist, 1, 70_000 + rep)
                    .unwrap()
                    .pop()
                    .unwrap();
                let mut rng = stream(7400, Namespace::Synthetic, rep);
                let mut surface = |level: &[f64], load: &[f64], row: usize| {
                    DMatrix::from_fn(nx, n_hist, |i, j| {
                        let log_rate = truth_map.common_level[i]
                            + truth_map.common_load[i] * hist[(0, j)]
                            + level[i]
                            + load[i] * hist[(row, j)];
                        Poisson::new(exposure * log_rate.exp())
                            .expect("positive rate")
                            .sample(&mut rng)
                    })
                };
                let deaths_f = surface(&truth_map.female_level, &truth_map.female_load, 1);
                let deaths_m = surface(&truth_map.male_level, &truth_map.male_load, 2);
                let ages: Vec<u16> = (0..nx as u16).collect();
                let years: Vec<i32> = (1950..1950 + n_hist as i32).collect();
                let flat = DMatrix::from_element(nx, n_hist, exposure);
                let data = AnnualMortalityData {
                    female: AnnualMortalitySurface {
                        ages: ages.clone(),
                        years: years.clone(),
                        deaths: deaths_f,
                        exposures: flat.clone(),
                    },
                    male: AnnualMortalitySurface {
                        ages,
                        years,
                        deaths: deaths_m,
                        exposures: flat,
                    },
                };

                let fit = lilee::fit(&data, None, &options).expect("replication fit");
                let trend =
                    timeseries::fit(&fit.common.index, &fit.female.index, &fit.male.index)
                        .expect("replication trend");
                let last = n_hist - 1;
                let y_fit = Vector3::new(
                    fit.common.index[last],
                    fit.female.index[last],
                    fit.male.index[last],
                );
                let map = RateMap::from_fit(&fit, exposure);
                let mut draws: Vec<f64> = simulate_paths(&trend, &y_fit, 1, 1000, 75_000 + rep)
                    .unwrap()
                    .iter()
                    .map(|p| map.total_deaths(&Vector3::new(p[(0, 0)], p[(1, 0)], p[(2, 0)])))
                    .collect();
                draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let lo = quantile_of_sorted(&draws, 0.025).unwrap();
                let hi = quantile_of_sorted(&draws, 0.975).unwrap();

                // the generating model's realised next year
                let y_true = Vector3::new(hist[(0, last)], hist[(1, last)], hist[(2, last)]);
                let next = simulate_paths(&truth_trend, &y_true, 1, 1, 76_000 + rep)
                    .unwrap()
                    .pop()
                    .unwrap();
                let realised =
                    truth_map.total_deaths(&Vector3::new(next[(0, 0)], next[(1, 0)], next[(2, 0)]));
                usize::from(lo <= realised && realised <= hi)
            })
            .sum();
        assert!(
            covered >= 90,
            "95% band covered the realised deaths in only {covered}/100 replications"
        );

        // mean-reverting deviations keep the log gender ratio at 65 inside a
        // fixed band on every simulated path of an 80-year horizon
        let paths = simulate_paths(&truth_trend, &y0, 80, 1000, 77_000).unwrap();
        let x = 65;
        let mut worst: f64 = 0.0;
        for path in &paths {
            for j in 0..80 {
                let gap = (truth_map.female_level[x] + truth_map.female_load[x] * path[(1, j)])
                    - (truth_map.male_level[x] + truth_map.male_load[x] * path[(2, j)]);
                worst = worst.max(gap.abs());
                assert!(
                    gap.abs() < 2.0,
                    "log gender ratio {gap} escaped the band in projection year {j}"
                );
            }
        }

        format!(
            "pass - band covered the realised total in {covered}/100 replications; \
             largest log gender ratio {worst:.2} stays inside the band"
        )
    });
}

#[test]
fn c08_life_table_identities() {
    gate(8, || {
        // dying with probability 1/2 each year telescopes to one expected year
        let e_half = life_expectancy(&vec![0.5; 31]);
        assert!((e_half - 1.0).abs() < 1e-8, "constant-half expectancy {e_half}");

        // a zero attributable fraction leaves every probability untouched
        let factor = exposure_adjustment(0.0).unwrap();
        assert_eq!(factor, 1.0);
        let rates: Vec<f64> = (0..=105).map(|x| (-7.0 + 0.06 * x as f64).exp()).collect();
        let q: Vec<f64> = rates.iter().map(|m| death_probability(*m)).collect();
        let q_adjusted: Vec<f64> = rates.iter().map(|m| death_probability(*m * factor)).collect();
        assert_eq!(q, q_adjusted);
        assert_eq!(life_expectancy(&q_adjusted) - life_expectancy(&q), 0.0);

        // lowering any probability strictly raises the expectancy
        let mut q_lower = q.clone();
        q_lower[40] *= 0.8;
        let delta = life_expectancy(&q_lower) - life_expectancy(&q);
        assert!(delta > 0.0, "lowered probabilities changed expectancy by {delta}");

        "pass - constant-q limit within 1e-8, null adjustment exact, lower risk means longer life"
            .to_string()
    });
}

#[test]
fn c09_heatwave_episode_metrics_are_exact() {
    gate(9, || {
        // sixteen days; the warm block is placed so the trailing three-day
        // means exceed both thresholds on exactly five consecutive days
        let n = 16;
        let dates = dates_from(2003, 7, 1, n);
        let min: Vec<f64> = (0..n).map(|t| if (3..8).contains(&t) { 24.0 } else { 18.0 }).collect();
        let max: Vec<f64> = (0..n).map(|t| if (3..8).contains(&t) { 34.0 } else { 28.0 }).collect();
        let mean: Vec<f64> = min.iter().zip(&max).map(|(a, b)| (a + b) / 2.0).collect();
        let series = DailyTemperatureSeries::new("constructed", dates, min, mean, max).unwrap();
        let thresholds = HeatwaveThresholds {
            min_threshold: 20.0,
            max_threshold: 30.0,
            reference: (2003, 2003),
        };
        let episodes = detect(&series, &thresholds);
        assert_eq!(episodes.len(), 1, "expected one episode, found {}", episodes.len());
        let ep = &episodes[0];
        assert_eq!(ep.start, NaiveDate::from_ymd_opt(2003, 7, 6).unwrap());
        assert_eq!(ep.end, NaiveDate::from_ymd_opt(2003, 7, 10).unwrap());
        assert_eq!(ep.days, 5);
        // flagged raw minima are 24,24,24,18,18 against 20 and the maxima
        // 34,34,34,28,28 against 30: distances 4+4+4+2+2 on each side
        assert_eq!(ep.severity, 32.0);
        assert_eq!(ep.intensity, 8.0);

        let Some(path) = std::env::var_os("CLIMORT_STATIONS_CSV") else {
            return "pass - constructed episode metrics exact; observed 2003 check skipped \
                    (CLIMORT_STATIONS_CSV unset)"
                .to_string();
        };
        let stations = load_station_temperatures(&path).expect("station file loads");
        let national = aggregate_stations(&stations).expect("stations share one axis");
        let thresholds =
            exceedance_thresholds(&national, DEFAULT_REFERENCE.0, DEFAULT_REFERENCE.1)
                .expect("reference window covered");
        let episodes = detect(&national, &thresholds);
        let august = NaiveDate::from_ymd_opt(2003, 8, 1).unwrap();
        let september = NaiveDate::from_ymd_opt(2003, 9, 1).unwrap();
        let ep = episodes
            .iter()
            .find(|e| e.end >= august && e.start < september)
            .expect("an August 2003 episode");
        assert_eq!(ep.days, 12, "observed 2003 episode lasted {} days", ep.days);
        assert!(
            (ep.severity - 92.0).abs() <= 0.05 * 92.0,
            "observed 2003 severity {}",
            ep.severity
        );
        assert!(
            (ep.intensity - 9.2).abs() <= 0.05 * 9.2,
            "observed 2003 intensity {}",
            ep.intensity
        );
        "pass - constructed episode metrics exact and the observed 2003 episode matches"
            .to_string()
    });
}

#[test]
fn c10_observed_data_anchors() {
    gate(10, || {
        let (Some(stations_path), Some(deaths_path)) = (
            std::env::var_os("CLIMORT_STATIONS_CSV"),
            std::env::var_os("CLIMORT_DEATHS_CSV"),
        ) else {
            return "skip - set CLIMORT_STATIONS_CSV and CLIMORT_DEATHS_CSV to check the \
                    observed-data anchors"
                .to_string();
        };
        let stations = load_station_temperatures(&stations_path).expect("station file loads");
        let national = aggregate_stations(&stations).expect("stations share one axis");
        let strata = load_daily_deaths(&deaths_path, &AgeBucketScheme::default_four())
            .expect("deaths file loads");

        // trim both sources to their common whole calendar years
        let first = {
            let d = national.first_date().max(strata[0].dates[0]);
            d.year() + i32::from(d != NaiveDate::from_ymd_opt(d.year(), 1, 1).unwrap())
        };
        let last = {
            let d = national.last_date().min(*strata[0].dates.last().unwrap());
            d.year() - i32::from(d != NaiveDate::from_ymd_opt(d.year(), 12, 31).unwrap())
        };
        let national = national.restrict_years(first, last).unwrap();
        let strata: Vec<DailyStratumSeries> =
            strata.iter().map(|s| s.restrict_years(first, last).unwrap()).collect();

        let model = dlnm::fit(&national, &strata, &DlnmConfig::default()).expect("observed fit");
        for s in &model.strata {
            assert!(
                (17.0..=21.0).contains(&s.mmt),
                "{:?} bucket {} has its minimum at {:.1}",
                s.gender,
                s.bucket_label,
                s.mmt
            );
        }

        // annual all-days attributable fraction summed over the strata
        let mut attributed: BTreeMap<i32, f64> = BTreeMap::new();
        let mut totals: BTreeMap<i32, f64> = BTreeMap::new();
        for s in &strata {
            let fit = model.stratum(s.gender, s.bucket).expect("stratum fitted");
            let log_rr =
                log_rr_series(&model.def, &fit.cross_coefficients(), fit.mmt, &national.mean)
                    .unwrap();
            for (i, date) in national.dates.iter().enumerate() {
                let deaths = s.deaths[i] as f64;
                *attributed.entry(date.year()).or_insert(0.0) +=
                    (1.0 - (-log_rr[i]).exp()) * deaths;
                *totals.entry(date.year()).or_insert(0.0) += deaths;
            }
        }
        let fractions: Vec<(i32, f64)> =
            attributed.iter().map(|(y, a)| (*y, a / totals[y])).collect();
        let in_band = fractions.iter().filter(|(_, f)| (0.06..=0.09).contains(f)).count();
        assert!(
            2 * in_band > fractions.len(),
            "attributable fraction in the 6-9% band in only {in_band}/{} years",
            fractions.len()
        );
        format!(
            "pass - every minimum in 17-21, fraction in the 6-9% band in {in_band}/{} years",
            fractions.len()
        )
    });
}
