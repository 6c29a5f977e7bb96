use chrono::NaiveDate;
use cryptoflow::econ::{fit_event_study, fit_ols_twfe, fit_poisson_twfe, ExtraRegressor, DISBURSED, INTERACTION};
use cryptoflow::synth::{gen_panel, Noise, PanelDgp};
use cryptoflow::{cc, EconError, FlowPanel, Measure, TreatSpec};
use nalgebra::{DMatrix, DVector};

fn dgp(n_units: usize, n_weeks: usize, beta: f64, noise: Noise, seed: u64) -> PanelDgp {
    let mut d = PanelDgp::random(n_units, n_weeks, 8.0, beta, noise, seed);
    d.treatment_week = n_weeks / 2;
    d
}

fn spec_for(d: &PanelDgp) -> TreatSpec {
    TreatSpec::new(cc!("US"), d.weeks()[d.treatment_week] + chrono::Days::new(4))
}

#[test]
fn noiseless_beta_is_recovered() {
    let d = dgp(12, 16, 0.163, Noise::None, 1);
    let (panel, _) = gen_panel(&d).unwrap();
    let fit = fit_poisson_twfe(&panel, &spec_for(&d)).unwrap();
    let (beta, _) = fit.interaction();
    assert!((beta - 0.163).abs() < 1e-8, "{beta}");
    let theta = fit.theta.as_ref().unwrap()[fit.index_of(INTERACTION).unwrap()];
    assert!((theta - 0.177).abs() < 5e-4);
    assert_eq!(fit.n_obs, 12 * 16);
    assert_eq!(fit.n_clusters, 12);
}

#[test]
fn identical_profiles_give_zero() {
    let d = dgp(6, 10, 0.0, Noise::None, 2);
    let (panel, _) = gen_panel(&d).unwrap();
    let (beta, _) = fit_poisson_twfe(&panel, &spec_for(&d)).unwrap().interaction();
    assert!(beta.abs() < 1e-8);
}

fn tiny_panel(values: &[f64], n_units: usize, measure: Measure) -> FlowPanel {
    let n_weeks = values.len() / n_units;
    let first = NaiveDate::from_ymd_opt(2020, 3, 1).unwrap();
    let weeks: Vec<NaiveDate> = (0..n_weeks).map(|k| first + chrono::Days::new(7 * k as u64)).collect();
    let codes = ["US", "GB", "DE", "FR", "NL", "AU", "CA", "NZ"];
    let meta = cryptoflow::panel::PanelMeta { window_start: weeks[0], window_end: weeks[n_weeks - 1], control_rule: "custom".into() };
    let mut p = FlowPanel::zeros(
        codes[..n_units].iter().map(|c| c.parse().unwrap()).collect(),
        weeks,
        measure,
        cryptoflow::CounterpartyFilter::All,
        meta,
    );
    p.values = values.iter().map(|v| Some(*v)).collect();
    p
}

fn spec_at(panel: &FlowPanel, week: usize) -> TreatSpec {
    TreatSpec::new(cc!("US"), panel.weeks[week])
}

#[test]
fn two_by_two_closed_form() {
    let p = tiny_panel(&[10.0, 30.0, 20.0, 25.0], 2, Measure::OutflowUsd);
    let (beta, _) = fit_poisson_twfe(&p, &spec_at(&p, 1)).unwrap().interaction();
    let closed = (30.0f64 * 20.0 / (10.0 * 25.0)).ln();
    assert!((beta - closed).abs() < 1e-10);
}

#[test]
fn rescaling_outcomes_leaves_slopes() {
    let d = dgp(8, 10, 0.1, Noise::Poisson, 3);
    let (panel, _) = gen_panel(&d).unwrap();
    let spec = spec_for(&d);
    let base = fit_poisson_twfe(&panel, &spec).unwrap();
    let mut scaled = panel.clone();
    scaled.values.iter_mut().for_each(|v| *v = v.map(|x| x * 1234.5));
    let other = fit_poisson_twfe(&scaled, &spec).unwrap();
    let (b0, s0) = base.interaction();
    let (b1, s1) = other.interaction();
    assert!((b0 - b1).abs() < 1e-8);
    assert!((s0 - s1).abs() / s0 < 1e-6);
}

/// Dense Poisson fit and clustered sandwich, written independently of the
/// library's sparse path.
fn dense_oracle(panel: &FlowPanel, first_treated: usize) -> (f64, f64) {
    let (n, t) = (panel.n_units(), panel.n_weeks());
    let k = n + (t - 1) + 1;
    let mut x = DMatrix::zeros(n * t, k);
    let mut y = DVector::zeros(n * t);
    for u in 0..n {
        for w in 0..t {
            let r = u * t + w;
            x[(r, u)] = 1.0;
            if w > 0 {
                x[(r, n + w - 1)] = 1.0;
            }
            if u == 0 && w >= first_treated {
                x[(r, k - 1)] = 1.0;
            }
            y[r] = panel.get(u, w).unwrap();
        }
    }
    let mut b = DVector::zeros(k);
    b.rows_mut(0, n).fill(y.mean().ln());
    for _ in 0..100 {
        let mu = (&x * &b).map(f64::exp);
        let score = x.transpose() * (&y - &mu);
        let h = x.transpose() * DMatrix::from_diagonal(&mu) * &x;
        let step = h.clone().lu().solve(&score).unwrap();
        b += step;
        if score.amax() < 1e-12 * y.amax() {
            break;
        }
    }
    let mu = (&x * &b).map(f64::exp);
    let h = x.transpose() * DMatrix::from_diagonal(&mu) * &x;
    let hinv = h.try_inverse().unwrap();
    let mut meat = DMatrix::zeros(k, k);
    for u in 0..n {
        let mut s = DVector::zeros(k);
        for w in 0..t {
            let r = u * t + w;
            s += x.row(r).transpose() * (y[r] - mu[r]);
        }
        meat += &s * s.transpose();
    }
    let v = &hinv * meat * &hinv * (n as f64 / (n as f64 - 1.0));
    (b[k - 1], v[(k - 1, k - 1)])
}

#[test]
fn sandwich_matches_dense_oracle() {
    let d = dgp(5, 6, 0.2, Noise::Poisson, 4);
    let (panel, _) = gen_panel(&d).unwrap();
    let fit = fit_poisson_twfe(&panel, &spec_for(&d)).unwrap();
    let (beta, se) = fit.interaction();
    let (ob, ov) = dense_oracle(&panel, d.treatment_week);
    assert!((beta - ob).abs() < 1e-8, "{beta} vs {ob}");
    assert!((se * se - ov).abs() / ov < 1e-10, "{} vs {ov}", se * se);
}

#[test]
fn clustered_covariance_is_psd() {
    let d = dgp(10, 12, 0.1, Noise::Poisson, 5);
    let (panel, _) = gen_panel(&d).unwrap();
    let mut spec = spec_for(&d);
    let lx: Vec<f64> = (0..12).map(|t| (t as f64 * 0.3).cos()).collect();
    spec.extra_regressors.push(ExtraRegressor::per_week("ln_usd_btc", &lx, 10));
    spec.drop_time_fe = true;
    let fit = fit_poisson_twfe(&panel, &spec).unwrap();
    assert_eq!(fit.names, vec![INTERACTION, DISBURSED, "ln_usd_btc"]);
    let v = DMatrix::from_fn(3, 3, |i, j| fit.vcov_clustered[i][j]);
    assert!((&v - v.transpose()).amax() < 1e-14 * v.amax());
    let eig = v.clone().symmetric_eigen().eigenvalues;
    assert!(eig.iter().all(|e| *e >= -1e-12 * v.amax()), "{eig}");
}

#[test]
fn event_study_reference_and_collapse() {
    let d = dgp(6, 9, 0.15, Noise::Poisson, 6);
    let (panel, _) = gen_panel(&d).unwrap();
    let es = fit_event_study(&panel, &spec_for(&d)).unwrap();
    let reference = es.weeks.iter().find(|w| w.week == es.reference_week).unwrap();
    assert_eq!((reference.beta, reference.se, reference.theta, reference.theta_se), (0.0, 0.0, 0.0, 0.0));
    assert_eq!(es.reference_week, d.weeks()[d.treatment_week - 1]);

    let p = tiny_panel(&[12.0, 19.0, 7.0, 9.0, 30.0, 31.0], 3, Measure::OutflowUsd);
    let did = fit_poisson_twfe(&p, &spec_at(&p, 1)).unwrap().interaction().0;
    let es = fit_event_study(&p, &spec_at(&p, 1)).unwrap();
    assert!((es.weeks[1].beta - did).abs() < 1e-8);
}

#[test]
fn ols_recovers_additive_effect() {
    let (n, t) = (5, 8);
    let values: Vec<f64> = (0..n)
        .flat_map(|u| (0..t).map(move |w| 40.0 + 3.0 * u as f64 + (w as f64 * 0.7).sin() * 4.0 + if u == 0 && w >= 5 { 5.0 } else { 0.0 }))
        .collect();
    let p = tiny_panel(&values, n, Measure::MeanTransactionSizeUsd);
    let fit = fit_ols_twfe(&p, &spec_at(&p, 5)).unwrap();
    assert!((fit.interaction().0 - 5.0).abs() < 1e-9);
    assert!(fit.theta.is_none());
    let mut shifted = p.clone();
    shifted.values.iter_mut().for_each(|v| *v = v.map(|x| x + 100.0));
    let moved = fit_ols_twfe(&shifted, &spec_at(&p, 5)).unwrap();
    assert!((moved.interaction().0 - 5.0).abs() < 1e-9);

    let mut holes = p.clone();
    holes.set(2, 3, None);
    let fit = fit_ols_twfe(&holes, &spec_at(&p, 5)).unwrap();
    assert_eq!(fit.n_obs, n * t - 1);
    assert!(matches!(fit_ols_twfe(&tiny_panel(&values, n, Measure::OutflowUsd), &spec_at(&p, 5)), Err(EconError::InvalidPanel(_))));
}

#[test]
fn separation_cases() {
    // Treated zero in every post week.
    let p = tiny_panel(&[5.0, 3.0, 0.0, 0.0, 4.0, 6.0, 5.0, 7.0], 2, Measure::OutflowUsd);
    assert!(matches!(fit_poisson_twfe(&p, &spec_at(&p, 2)), Err(EconError::Separation { .. })));
    // Treated zero in every pre week.
    let p = tiny_panel(&[0.0, 0.0, 3.0, 4.0, 4.0, 6.0, 5.0, 7.0], 2, Measure::OutflowUsd);
    assert!(matches!(fit_poisson_twfe(&p, &spec_at(&p, 2)), Err(EconError::Separation { .. })));
    // A week that is zero everywhere.
    let p = tiny_panel(&[5.0, 0.0, 3.0, 4.0, 4.0, 0.0, 5.0, 7.0], 2, Measure::OutflowUsd);
    assert!(matches!(fit_poisson_twfe(&p, &spec_at(&p, 2)), Err(EconError::Separation { .. })));
    // The event study cannot place a zero treated week.
    let p = tiny_panel(&[5.0, 0.0, 3.0, 4.0, 4.0, 2.0, 5.0, 7.0], 2, Measure::OutflowUsd);
    assert!(fit_poisson_twfe(&p, &spec_at(&p, 2)).is_ok());
    assert!(matches!(fit_event_study(&p, &spec_at(&p, 2)), Err(EconError::Separation { .. })));
}

#[test]
fn all_zero_controls_drop_out() {
    let p = tiny_panel(&[5.0, 6.0, 9.0, 8.0, 0.0, 0.0, 0.0, 0.0, 4.0, 5.0, 4.0, 6.0], 3, Measure::OutflowUsd);
    let fit = fit_poisson_twfe(&p, &spec_at(&p, 2)).unwrap();
    assert_eq!(fit.dropped_units, vec![cc!("GB")]);
    assert_eq!(fit.n_obs, 8);
    assert_eq!(fit.n_clusters, 2);
}

#[test]
fn bad_specs_are_rejected() {
    let p = tiny_panel(&[5.0, 6.0, 9.0, 8.0], 2, Measure::OutflowUsd);
    assert!(matches!(fit_poisson_twfe(&p, &spec_at(&p, 0)), Err(EconError::InvalidSpec(_))));
    let late = TreatSpec::new(cc!("US"), NaiveDate::from_ymd_opt(2021, 1, 1).unwrap());
    assert!(matches!(fit_poisson_twfe(&p, &late), Err(EconError::InvalidSpec(_))));
    let other = TreatSpec::new(cc!("NG"), p.weeks[1]);
    assert!(matches!(fit_poisson_twfe(&p, &other), Err(EconError::InvalidSpec(_))));
    let mut empty = p.clone();
    empty.countries.clear();
    empty.values.clear();
    assert!(matches!(fit_poisson_twfe(&empty, &spec_at(&p, 1)), Err(EconError::EmptyPanel)));
}
