use nalgebra::DVector;
use proptest::prelude::*;

use uclf_adapt::adapt::{
    corollary1_update, gain_rate_bound, leakage_with_gain, project, remark5_update, GainFunction,
};
use uclf_adapt::cli::io::{read_trace_csv, read_trace_json, write_trace_csv, write_trace_json, TraceTable};
use uclf_adapt::numkit::{finite_diff_gradient, integrate_fixed, IntegratorSpec};
use uclf_adapt::plant::{BuiltinModel, ModelId, ParamBox};
use uclf_adapt::simloop::{compute_metrics, lemma1_harness, Lemma1Spec, SignalSpec, Trace, TraceDims, TraceRow};
use uclf_adapt::uclf::{build_family, UclfConstants, UclfId};

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        -1e3..1e3f64,
        any::<f64>().prop_filter("finite", |v| v.is_finite()),
    ]
}

proptest! {
    #[test]
    fn exponential_gain_is_admissible(gbar in 0.01..100.0f64, tau in 0.05..20.0f64, rho in -200.0..0.0f64, d in 1e-6..1.0f64) {
        let g = GainFunction::exponential(gbar, tau);
        let (gamma, slope) = g.eval(rho).unwrap();
        prop_assert!(gamma >= g.floor() && gamma <= gbar * (1.0 + 1e-15));
        prop_assert!(slope > 0.0 || gamma - g.floor() < 1e-12 * gbar);
        let (lower, _) = g.eval(rho - d).unwrap();
        prop_assert!(lower <= gamma);
        prop_assert_eq!(g.eval(0.0).unwrap().0, gbar);
    }

    #[test]
    fn rational_gain_stays_in_range(gbar in 0.01..100.0f64, rho in -1e3..0.0f64) {
        let g = GainFunction::rational(gbar);
        let (gamma, slope) = g.eval(rho).unwrap();
        prop_assert!(gamma >= g.floor() && gamma <= gbar);
        prop_assert!(slope >= 0.0);
        prop_assert!(g.eval(1e-3).is_err());
    }

    /// The implementable law never exceeds the oracle rate bound.
    #[test]
    fn corollary1_respects_rate_bound(
        gbar in 0.01..10.0f64,
        frac in 0.1..=1.0f64,
        max_err in 0.0..5.0f64,
        err_frac in -1.0..=1.0f64,
        margin in 1e-3..20.0f64,
        s in -1e3..1e3f64,
        offset in 1.0..10.0f64,
        v in 0.0..1e3f64,
    ) {
        let eta = max_err * max_err + margin;
        let gamma = frac * gbar;
        let floor = 0.1 * gbar;
        let bound = gain_rate_bound(gamma, eta, err_frac * max_err, s).unwrap();
        let slack = 1e-12 * (1.0 + bound.abs());
        let r = corollary1_update(gbar, floor, eta, max_err, gamma, s).unwrap();
        prop_assert!(r <= bound + slack, "{} > {}", r, bound);
        let r = remark5_update(gbar, floor, eta, max_err, gamma, s, v, offset).unwrap();
        prop_assert!(r <= bound + slack, "{} > {}", r, bound);
    }

    /// `ρ = 0` is a barrier for the leaky dynamics with nonpositive input.
    #[test]
    fn leakage_keeps_rho_nonpositive(gbar in 0.01..10.0f64, w in -10.0..10.0f64, lambda in 0.01..10.0f64, k in 0.0..10.0f64, rho in -50.0..0.0f64) {
        let g = GainFunction::exponential(gbar, 1.0);
        prop_assert!(leakage_with_gain(&g, 0.0, w, lambda, k).unwrap() <= 0.0);
        let rate = leakage_with_gain(&g, rho, w.min(0.0), lambda, 0.0).unwrap();
        prop_assert!(rate >= 0.0);
    }

    /// Projection never points out of the box and only removes components.
    #[test]
    fn projection_is_inward(
        bounds in prop::collection::vec((-10.0..0.0f64, 0.0..10.0f64), 1..6),
        pos in prop::collection::vec(0.0..=1.0f64, 6),
        snap in prop::collection::vec(0u8..3, 6),
        rate in prop::collection::vec(-100.0..100.0f64, 6),
    ) {
        let p = bounds.len();
        let b = ParamBox::new(&bounds).unwrap();
        let theta = DVector::from_fn(p, |i, _| {
            let (lo, hi) = bounds[i];
            match snap[i] {
                0 => lo,
                1 => hi,
                _ => lo + pos[i] * (hi - lo),
            }
        });
        let rate = DVector::from_fn(p, |i, _| rate[i]);
        let out = project(&b, &theta, &rate).unwrap();
        for i in 0..p {
            let (lo, hi) = bounds[i];
            prop_assert!(out[i] == rate[i] || out[i] == 0.0);
            if theta[i] >= hi { prop_assert!(out[i] <= 0.0); }
            if theta[i] <= lo { prop_assert!(out[i] >= 0.0); }
            if theta[i] > lo && theta[i] < hi { prop_assert_eq!(out[i], rate[i]); }
        }
    }

    #[test]
    fn box_clamp_is_idempotent_and_inside(
        bounds in prop::collection::vec((-10.0..0.0f64, 0.0..10.0f64), 1..6),
        v in prop::collection::vec(-100.0..100.0f64, 6),
    ) {
        let b = ParamBox::new(&bounds).unwrap();
        let v = DVector::from_fn(bounds.len(), |i, _| v[i]);
        let c = b.clamp(&v);
        prop_assert!(b.contains(&c));
        prop_assert_eq!(b.clamp(&c), c);
    }

    /// RK4 on `ẋ = −a·x` matches the closed form to fourth order.
    #[test]
    fn rk4_matches_linear_decay(a in 0.1..5.0f64, x0 in -10.0..10.0f64) {
        let f = move |_t: f64, x: &[f64], dx: &mut [f64]| dx[0] = -a * x[0];
        let tr = integrate_fixed(&f, 0.0, &[x0], &IntegratorSpec::rk4(1e-2, 2.0)).unwrap();
        for (t, x) in tr.iter() {
            let exact = x0 * (-a * t).exp();
            prop_assert!((x[0] - exact).abs() <= 1e-7 * (1.0 + x0.abs()), "t={} {} vs {}", t, x[0], exact);
        }
    }

    /// Analytic uclf gradients agree with central differences for arbitrary
    /// admissible constants.
    #[test]
    fn uclf_gradients_match_finite_differences(
        which in 0usize..3,
        k1 in 0.2..5.0f64,
        k2 in 0.2..5.0f64,
        k3 in 0.2..10.0f64,
        beta in 0.2..5.0f64,
        raw_x in prop::collection::vec(-3.0..3.0f64, 3),
        raw_t in prop::collection::vec(0.0..=1.0f64, 4),
    ) {
        let model = [ModelId::Eq7, ModelId::Chain3, ModelId::Min2][which];
        let m = BuiltinModel::new(model);
        let b = m.default_theta_box();
        let consts = UclfConstants { k1, k2, k3, beta };
        let fam = build_family(UclfId::for_model(model), consts, model, &b).unwrap();
        let x = DVector::from_fn(fam.state_dim(), |i, _| raw_x[i]);
        let th = DVector::from_fn(fam.param_dim(), |i, _| {
            let iv = b.interval(i);
            iv.lo + raw_t[i] * (iv.hi - iv.lo)
        });
        let checks = [
            (fam.grad_x(&x, &th, 0.0), finite_diff_gradient(|z| fam.value(&DVector::from_column_slice(z), &th, 0.0), x.as_slice(), 1e-5).unwrap()),
            (fam.grad_theta(&x, &th, 0.0), finite_diff_gradient(|z| fam.value(&x, &DVector::from_column_slice(z), 0.0), th.as_slice(), 1e-5).unwrap()),
        ];
        for (a, fd) in checks {
            let fd = DVector::from_vec(fd);
            let err = (&a - &fd).amax();
            prop_assert!(err <= 1e-5 * a.amax().max(1e-3), "{} vs {}", a, fd);
        }
    }

    /// Bitwise round trip of arbitrary finite values through both formats.
    #[test]
    fn trace_files_round_trip(vals in prop::collection::vec(finite(), 13 * 3)) {
        let rows: Vec<TraceRow> = vals
            .chunks(13)
            .enumerate()
            .map(|(k, c)| TraceRow {
                t: k as f64 * 0.5,
                x: vec![c[0], c[1]],
                u: vec![c[2]],
                theta_hat: vec![c[3]],
                phi_hat: vec![c[4]],
                rho: vec![c[5]],
                gamma: vec![c[6]],
                v: c[7],
                q: c[8],
                vc: c[9],
                s: vec![c[10]],
                w: vec![c[11]],
                gamma_rate: vec![c[12]],
                gamma_rate_input: vec![],
                vc_algebraic: 0.0,
            })
            .collect();
        let tr = Trace {
            dims: TraceDims { n: 2, m: 1, p: 1, q: 1, r: 1 },
            law: "corollary1".into(),
            nominal_gains: vec![1.0],
            rows,
        };
        let (mut c, mut j) = (Vec::new(), Vec::new());
        write_trace_csv(&tr, &mut c).unwrap();
        write_trace_json(&tr, &mut j).unwrap();
        let expected = TraceTable::from_trace(&tr);
        prop_assert_eq!(read_trace_csv(c.as_slice()).unwrap(), expected.clone());
        prop_assert_eq!(read_trace_json(j.as_slice()).unwrap(), expected);
    }

    /// Reductions stay within `[0, 0.9]` for gains in the admissible range.
    #[test]
    fn gain_reduction_in_range(fracs in prop::collection::vec(0.1..=1.0f64, 1..50), gbar in 0.01..10.0f64) {
        let rows = fracs
            .iter()
            .enumerate()
            .map(|(k, f)| TraceRow {
                t: k as f64,
                x: vec![0.0],
                u: vec![0.0],
                theta_hat: vec![0.0],
                phi_hat: vec![],
                rho: vec![0.0],
                gamma: vec![f * gbar],
                v: 0.0,
                q: 0.0,
                vc: 0.0,
                s: vec![0.0],
                w: vec![0.0],
                gamma_rate: vec![0.0],
                gamma_rate_input: vec![],
                vc_algebraic: 0.0,
            })
            .collect();
        let tr = Trace {
            dims: TraceDims { n: 1, m: 1, p: 1, q: 0, r: 1 },
            law: "corollary1".into(),
            nominal_gains: vec![gbar],
            rows,
        };
        let m = compute_metrics(&tr, 1e-2);
        prop_assert!(m.gain_reduction[0] >= 0.0 && m.gain_reduction[0] <= 0.9 + 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// A constant negative pulse drives `ρ` monotonically toward the rest
    /// point `K·w/λ` without overshoot, then back toward zero.
    #[test]
    fn pulse_response_stays_between_rest_point_and_zero(amp in -2.0..-0.05f64, lambda in 0.5..3.0f64, k in 0.1..2.0f64) {
        let spec = Lemma1Spec {
            gain: GainFunction::exponential(1.0, 1.0),
            lambda,
            k,
            signal: SignalSpec::Pulse { amplitude: amp, duration: 2.0 },
            horizon: 8.0,
            step: 2e-3,
        };
        let (traj, rep) = lemma1_harness(&spec).unwrap();
        let rest = k * amp / lambda;
        prop_assert_eq!(rep.rest_point, Some(rest));
        let mut prev = 0.0;
        for (t, r) in traj.iter() {
            prop_assert!(r[0] <= 1e-15 && r[0] >= rest - 1e-12, "t={} rho={} rest={}", t, r[0], rest);
            if t < 2.0 - 1e-9 {
                prop_assert!(r[0] <= prev + 1e-15);
            }
            prev = r[0];
        }
        prop_assert_eq!(rep.comparison_bound_holds, Some(true));
    }
}
