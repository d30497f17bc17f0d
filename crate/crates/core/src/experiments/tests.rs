use super::*;
use crate::filters::{simulate_trajectory, NoiseSource, Scheme};
use crate::hierarchy::initial_hierarchy;
use crate::hierarchy::{closed_form_n11, integrate_me, Component};
use proptest::prelude::*;

fn n11_series(s: &SingleModeScenario, t_end: f64, dt: f64) -> Vec<(f64, f64)> {
    let (model, pulse, h0) = build_single_mode(s).unwrap();
    let n = single_mode_number(s);
    let mut out = vec![];
    integrate_me(&model, &pulse, &h0, t_end, dt, 10, |h| {
        out.push((h.t, h.expect(Component::C11, &n).re))
    })
    .unwrap();
    out
}

#[test]
fn spare_level_stays_empty() {
    let s = SingleModeScenario::new(1.0, 1.0);
    let (model, pulse, h0) = build_single_mode(&s).unwrap();
    let mut worst = 0.0f64;
    integrate_me(&model, &pulse, &h0, 12.0, 1e-3, 50, |h| {
        let p = h
            .rho11()
            .unwrap()
            .top_level_population(model.layout(), Slot::Mode(0))
            .unwrap();
        worst = worst.max(p);
    })
    .unwrap();
    assert!(worst < 1e-10, "{worst}");
}

#[test]
fn matched_rates_give_the_largest_peak() {
    let peak = |g: f64| {
        n11_series(&SingleModeScenario::new(g, 1.0), 30.0, 1e-3)
            .into_iter()
            .fold(
                (0.0, 0.0),
                |best, (t, n)| if n > best.1 { (t, n) } else { best },
            )
    };
    let (t1, p1) = peak(1.0);
    assert!((p1 - 4.0 * (-2.0f64).exp()).abs() < 1e-6);
    assert!((t1 - 2.0).abs() < 0.011);
    for g in [0.1, 10.0] {
        assert!(peak(g).1 < p1);
    }
    for (t, n) in n11_series(&SingleModeScenario::new(0.1, 1.0), 12.0, 1e-3) {
        assert!((n - closed_form_n11(0.1, 1.0, t, 0.0)).abs() < 1e-6);
    }
}

#[test]
fn scenario_validation() {
    let mut s = SingleModeScenario::new(1.0, 1.0);
    s.dim_a = 1;
    assert!(build_single_mode(&s).is_err());
    assert!(build_single_mode(&SingleModeScenario::new(0.0, 1.0)).is_err());
    let mut k = KerrScenario::new(1.0, 4.0, 0.1);
    k.kappa_b = -1.0;
    assert!(build_kerr(&k).is_err());
}

#[test]
fn moment_oracle_initial_coherence_slope() {
    let s = SingleModeScenario::new(1.0, 1.0);
    let dt = 1e-5;
    let m = moment_oracle_pd(&s, &[], dt, dt, 1).unwrap();
    let slope = (m.a01[1] - m.a01[0]) / dt;
    assert!((slope - C64::new(-1.0, 0.0)).norm() < 1e-4, "{slope}");
}

fn first_click_trajectory(s: &SingleModeScenario, dt: f64) -> crate::filters::Trajectory {
    let (model, pulse, h0) = build_single_mode(s).unwrap();
    let spec = TrajectorySpec::new(8.0, dt, 1).observe(Observable::re("n", single_mode_number(s)));
    (0..50)
        .map(|i| {
            simulate_trajectory(
                &model,
                &pulse,
                Scheme::Photodetect,
                &h0,
                &spec,
                &mut NoiseSource::new(13, i),
            )
            .unwrap()
        })
        .find(|tr| tr.record.jump_times().first().is_some_and(|&t| t > 1.5))
        .expect("a trajectory with a late click")
}

#[test]
fn moment_oracle_follows_the_matrix_filter() {
    let s = SingleModeScenario::new(1.0, 1.0);
    let dt = 1e-3;
    let tr = first_click_trajectory(&s, dt);
    let tj = tr.record.jump_times()[0];
    let m = moment_oracle_pd(&s, tr.record.jump_times(), 8.0, dt, 1).unwrap();
    let n = tr.column("n").unwrap();
    let nu = tr.column("nu").unwrap();
    assert_eq!(m.times.len(), n.len());
    for k in 0..n.len() {
        let t = tr.times[k];
        assert!((m.times[k] - t).abs() < 1e-9);
        if t < tj - 0.5 * dt {
            assert!(
                (m.n11[k] - n[k]).abs() < 1e-6,
                "t={t}: {} vs {}",
                m.n11[k],
                n[k]
            );
            assert!((m.nu[k] - nu[k]).abs() < 1e-6);
        } else {
            // vacuum collapse, nothing left to detect
            assert!(m.n11[k].abs() < 1e-15 && m.e00[k].abs() < 1e-15 && m.a01[k].norm() < 1e-15);
            assert!(n[k].abs() < 1e-12);
        }
    }
}

#[test]
fn moment_oracle_rejects_a_click_at_zero_rate() {
    let s = SingleModeScenario::new(1.0, 1.0);
    // Two clicks: the second finds ν = 0.
    let r = moment_oracle_pd(&s, &[1.0, 2.0], 3.0, 1e-3, 1);
    assert!(matches!(
        r,
        Err(Error::AtTime { .. }) | Err(Error::ImpossibleJump)
    ));
}

#[test]
fn no_click_rate_dips_to_zero() {
    let s = SingleModeScenario::new(1.0, 1.0);
    let m = moment_oracle_pd(&s, &[], 12.0, 1e-3, 1).unwrap();
    let (k, min) =
        m.nu[1..].iter().enumerate().fold(
            (0, f64::INFINITY),
            |b, (i, &v)| if v < b.1 { (i + 1, v) } else { b },
        );
    assert!(min < 1e-6, "{min}");
    assert!(m.times[k] > 0.5 && m.times[k] < 6.0);
}

#[test]
fn pre_jump_state_is_a_fock_mixture() {
    let s = SingleModeScenario::new(1.0, 1.0);
    let h = pre_jump_state(&s, 2.8, 1e-3).unwrap();
    let off: f64 = (0..3)
        .flat_map(|i| (0..3).map(move |j| (i, j)))
        .filter(|(i, j)| i != j)
        .map(|(i, j)| h.r11[(i, j)].norm())
        .sum();
    assert!(off < 1e-12);
    let m = moment_oracle_pd(&s, &[], 2.8, 1e-3, 1).unwrap();
    assert!((h.r11[(1, 1)].re - m.n11.last().unwrap()).abs() < 1e-9);
}

#[test]
fn kerr_scale_and_detuning() {
    let s = KerrScenario::new(1.0, 4.0, 0.1);
    assert_eq!(s.beta, 4.0);
    assert!((s.delta_beta() - 0.1).abs() < 1e-15);
    assert_eq!(s.alpha_ss(), C64::new(0.0, -2.0));
    assert_eq!(s.resolved_frame(), Frame::Displaced);
    assert_eq!(
        KerrScenario::new(1.0, 1.0, 0.1).resolved_frame(),
        Frame::Bare
    );

    let s = KerrScenario::new(1.0, 10.0, 0.1);
    let setup = build_kerr(&s).unwrap();
    assert!((feedback_detuning(&setup.h0, s.chi, &setup.n_b) + 2.5).abs() < 1e-12);

    let mut s = KerrScenario::new(1.0, 2.0, 0.1);
    s.beta = 0.0;
    let setup = build_kerr(&s).unwrap();
    assert_eq!(feedback_detuning(&setup.h0, s.chi, &setup.n_b), 0.0);
}

#[test]
fn truncation_audit_names_the_requirement() {
    let mut s = KerrScenario::new(1.0, 1.0, 0.1);
    s.dim_b = Some(2);
    let msg = build_kerr(&s).unwrap_err().to_string();
    assert!(
        msg.contains(&format!("dim_b >= {}", s.required_dim_b())),
        "{msg}"
    );
    // the bare frame carries the coherent amplitude
    let mut big = KerrScenario::new(1.0, 10.0, 0.1);
    big.frame = Frame::Bare;
    assert!(big.required_dim_b() > 30);
    big.frame = Frame::Displaced;
    assert!(big.required_dim_b() <= 6);
}

#[test]
fn interaction_conserves_photons_in_a() {
    for frame in [Frame::Bare, Frame::Displaced] {
        let mut s = KerrScenario::new(1.0, 4.0, 0.1);
        s.frame = frame;
        s.dim_b = Some(s.required_dim_b().max(10));
        let setup = build_kerr(&s).unwrap();
        let mut r11 = setup.h0.r11.clone();
        r11[(0, 0)] += C64::new(0.3, 0.0);
        let h = setup.model.hamiltonian(0.4, &r11).unwrap();
        assert!(h.commutator(&setup.n_a).unwrap().norm() < 1e-12);
    }
}

#[test]
fn feedback_cancels_the_mean_field_shift() {
    // For a product state, −i tr(a [H, ρ]) vanishes when δ_a = −χ⟨n_b⟩.
    let s = KerrScenario::new(1.0, 1.0, 0.3);
    let setup = build_kerr(&s).unwrap();
    let layout = setup.model.layout();
    let a_state = Ket::from_amplitudes(crate::hilbert::CVector::from_vec(vec![
        C64::new(0.8, 0.0),
        C64::new(0.0, 0.6),
        C64::new(0.0, 0.0),
    ]))
    .unwrap();
    let b_state = coherent_ket(C64::new(0.2, -0.4), setup.dim_b).unwrap();
    let rho = a_state.tensor(&b_state).projector();
    let h = setup.model.hamiltonian(0.0, rho.matrix()).unwrap();
    let (a, _) = ladder_ops(3).unwrap();
    let a = embed(&a, Slot::Mode(0), layout).unwrap();
    let hm = h.matrix();
    let r = rho.matrix();
    let d = (a.matrix() * (hm * r - r * hm)).trace() * C64::new(0.0, -1.0);
    // drive term acts on b only
    assert!(d.norm() < 1e-12, "{d}");
}

#[test]
fn zero_coupling_reproduces_the_single_mode_cavity() {
    let k = KerrScenario::new(1.0, 2.0, 0.0);
    let setup = build_kerr(&k).unwrap();
    let mut two = vec![];
    integrate_me(
        &setup.model,
        &setup.pulse,
        &setup.h0,
        10.0,
        1e-3,
        100,
        |h| two.push(h.expect(Component::C11, &setup.n_a).re),
    )
    .unwrap();
    let one: Vec<f64> = n11_series(&SingleModeScenario::new(1.0, 1.0), 10.0, 1e-3)
        .into_iter()
        .map(|p| p.1)
        .collect();
    let one: Vec<f64> = one.iter().step_by(10).copied().collect();
    assert_eq!(one.len(), two.len());
    for (x, y) in one.iter().zip(&two) {
        assert!((x - y).abs() < 1e-10);
    }
}

#[test]
fn drive_relaxes_to_the_steady_state_amplitude() {
    let mut s = KerrScenario::new(1.0, 2.0, 0.0);
    s.frame = Frame::Bare;
    s.dim_b = Some(12);
    let setup = build_kerr(&s).unwrap();
    let vac = Ket::vacuum(3).tensor(&Ket::vacuum(12)).projector();
    let h0 = initial_hierarchy(&vac).unwrap();
    let h = integrate_me(
        &setup.model,
        &Pulse::absent(),
        &h0,
        20.0,
        1e-3,
        1000,
        |_| {},
    )
    .unwrap();
    let b = h.expect(Component::C11, &setup.b);
    assert!((b - s.alpha_ss()).norm() < 1e-6, "{b}");
}

#[test]
fn increment_check_at_the_fixed_point() {
    let mut s = KerrScenario::new(1.0, 2.0, 0.0);
    s.frame = Frame::Bare;
    s.dim_b = Some(20);
    let mut setup = build_kerr(&s).unwrap();
    setup.pulse = Pulse::absent();
    let mut h = setup.h0.clone();
    h.t = 1.0;
    // ν = 0 without a photon, so only the no-click branch applies
    let r = b_increment_check(&setup, &h, 1e-3, Outcome::NoClick).unwrap();
    assert!(r < 1e-10, "{r}");
}

#[test]
fn increment_check_along_a_trajectory() {
    for frame in [Frame::Bare, Frame::Displaced] {
        let mut s = KerrScenario::new(1.0, 4.0, 0.1);
        s.frame = frame;
        let setup = build_kerr(&s).unwrap();
        let dt = 1e-3;
        let mut f = SmeFilter::new(&setup.model, &setup.pulse, setup.h0.clone()).unwrap();
        for k in 0..2500 {
            if k % 500 == 250 {
                let h = f.state();
                let scale = h.expect(Component::C11, &setup.b).norm().max(1.0);
                let no = b_increment_check(&setup, h, dt, Outcome::NoClick).unwrap();
                assert!(
                    no < 10.0 * dt * dt * s.kappa_b * s.kappa_b * scale,
                    "{frame:?} t={}: {no}",
                    h.t
                );
                let yes = b_increment_check(&setup, h, dt, Outcome::Click).unwrap();
                assert!(yes < 1e-8, "{frame:?} t={}: {yes}", h.t);
            }
            f.step_photodetect(dt, Draw::Force(false)).unwrap();
        }
    }
}

#[test]
fn frames_agree() {
    let mut s = KerrScenario::new(1.0, 1.0, 0.1);
    s.dim_b = Some(12);
    s.frame = Frame::Bare;
    let bare = build_kerr(&s).unwrap();
    s.frame = Frame::Displaced;
    let disp = build_kerr(&s).unwrap();
    assert!((s.beta - 0.25).abs() < 1e-15);
    for scheme in [Scheme::Photodetect, Scheme::Homodyne] {
        let run = |setup: &KerrSetup| {
            let spec = setup.trajectory_spec(6.0, 1e-3, 20);
            simulate_trajectory(
                &setup.model,
                &setup.pulse,
                scheme,
                &setup.h0,
                &spec,
                &mut NoiseSource::new(4, 2),
            )
            .unwrap()
        };
        let (x, y) = (run(&bare), run(&disp));
        assert_eq!(x.record.jump_times(), y.record.jump_times());
        let gap = x
            .column("X_b")
            .unwrap()
            .iter()
            .zip(y.column("X_b").unwrap())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(gap < 1e-4, "{scheme:?}: {gap}");
    }
}

#[test]
fn no_photon_no_shift() {
    let mut setup = build_kerr(&KerrScenario::new(1.0, 4.0, 0.1)).unwrap();
    setup.pulse = Pulse::absent();
    let spec = setup.trajectory_spec(8.0, 1e-3, 10);
    let tr = simulate_trajectory(
        &setup.model,
        &setup.pulse,
        Scheme::Photodetect,
        &setup.h0,
        &spec,
        &mut NoiseSource::new(1, 0),
    )
    .unwrap();
    let obs = TrajectoryObservables::from_trajectory(&tr, setup.x_b_reference()).unwrap();
    assert!(obs.jump_times.is_empty());
    assert!(max_conditional_shift(&obs) < 5e-3);
    assert_eq!(obs.times.len(), obs.x_b.len());
}

#[test]
fn shift_exceeds_the_reference_scale_and_relaxes() {
    let s = KerrScenario::new(1.0, 4.0, 0.1);
    let setup = build_kerr(&s).unwrap();
    let spec = setup.trajectory_spec(12.0, 1e-3, 10);
    let x_ref = setup.x_b_reference();
    let found = (0..20).find_map(|i| {
        let tr = simulate_trajectory(
            &setup.model,
            &setup.pulse,
            Scheme::Photodetect,
            &setup.h0,
            &spec,
            &mut NoiseSource::new(2, i),
        )
        .unwrap();
        let obs = TrajectoryObservables::from_trajectory(&tr, x_ref).unwrap();
        (obs.max_shift > s.delta_beta()).then_some(obs)
    });
    let obs = found.expect("some trajectory beyond Δβ");
    assert_eq!(obs.jump_times.len(), 1);
    let tau = relaxation_time(&obs, x_ref).unwrap();
    // b relaxes at κ_b/2 once the photon is gone
    assert!(tau > 0.0 && tau < 4.0 / s.kappa_b, "{tau}");
    let p_excursion = obs
        .p_b
        .iter()
        .map(|p| (p - obs.p_b[0]).abs())
        .fold(0.0, f64::max);
    assert!(p_excursion < 0.5 * obs.max_shift);
}

#[test]
fn relaxation_time_of_an_exponential() {
    let times: Vec<f64> = (0..=4000).map(|k| k as f64 * 1e-3).collect();
    let x_b: Vec<f64> = times
        .iter()
        .map(|&t| {
            if t < 1.0 {
                0.1 * t
            } else {
                0.1 * (-(t - 1.0) * 2.0).exp()
            }
        })
        .collect();
    let obs = TrajectoryObservables {
        n_a: vec![0.0; times.len()],
        p_b: vec![0.0; times.len()],
        nu: vec![0.0; times.len()],
        jump_times: vec![1.0],
        max_shift: 0.1,
        x_b,
        times,
    };
    assert!((relaxation_time(&obs, 0.0).unwrap() - 0.5).abs() < 2e-3);
    let none = TrajectoryObservables {
        jump_times: vec![],
        ..obs
    };
    assert_eq!(relaxation_time(&none, 0.0), None);
}

#[test]
fn histogram_of_equal_values() {
    let h = shift_histogram(&[0.05; 200], 0.01, 20).unwrap();
    assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1);
    assert_eq!(h.counts[5], 200);
    assert_eq!(h.gap, None);
    assert_eq!(h.median, 0.05);
}

#[test]
fn histogram_reports_the_gap() {
    let mut v: Vec<f64> = (0..150).map(|k| 0.001 + 1e-5 * k as f64).collect();
    v.extend((0..150).map(|k| 0.105 + 1e-4 * k as f64));
    let h = shift_histogram(&v, 0.01, 20).unwrap();
    let g = h.gap.unwrap();
    assert_eq!((g.first_bin, g.bins), (1, 9));
    assert!((g.left - 0.01).abs() < 1e-15 && (g.right - 0.1).abs() < 1e-15);
    assert_eq!((g.mass_below, g.mass_above), (150, 150));
    let table = h.to_table();
    assert_eq!(table.rows.len(), 20);
}

#[test]
fn histogram_single_empty_bin_is_not_a_gap() {
    let mut v = vec![0.005; 100];
    v.extend([0.025; 100]);
    assert_eq!(shift_histogram(&v, 0.01, 10).unwrap().gap, None);
}

#[test]
fn histogram_needs_enough_values() {
    assert!(shift_histogram(&[0.1; 99], 0.01, 10).is_err());
    let mut v = vec![0.1; 100];
    v[3] = f64::NAN;
    assert!(shift_histogram(&v, 0.01, 10).is_err());
}

#[test]
fn overflow_closes_a_gap() {
    let mut v = vec![0.001; 100];
    v.extend([5.0; 10]);
    let h = shift_histogram(&v, 0.01, 10).unwrap();
    assert_eq!(h.overflow, 10);
    let g = h.gap.unwrap();
    assert_eq!((g.first_bin, g.bins, g.mass_above), (1, 9, 10));
}

proptest! {
    #[test]
    fn histogram_accounts_for_every_value(v in prop::collection::vec(0.0f64..0.3, 100..400), w in 0.005f64..0.05) {
        let h = shift_histogram(&v, w, 20).unwrap();
        prop_assert_eq!(h.counts.iter().sum::<u64>() + h.overflow, v.len() as u64);
        if let Some(g) = h.gap {
            prop_assert!(g.bins >= 2);
            prop_assert!(h.counts[g.first_bin..g.first_bin + g.bins].iter().all(|&c| c == 0));
            prop_assert!(g.first_bin > 0 && h.counts[g.first_bin - 1] > 0);
            let after = g.first_bin + g.bins;
            prop_assert!(after == h.counts.len() && h.overflow > 0 || h.counts[after] > 0);
            prop_assert_eq!(g.mass_below + g.mass_above, v.len() as u64);
        }
        let below = v.iter().filter(|&&x| x < h.median).count();
        prop_assert!(below <= v.len() / 2);
    }
}

#[test]
fn pre_jump_state_is_a_vacuum_photon_mixture_in_phase_space() {
    let s = SingleModeScenario::new(1.0, 1.0);
    let xs = grid_axis(-5.0, 5.0, 0.05);
    let d = wigner_diagnostic(&s, 2.8, 1e-3, &xs, &xs).unwrap();
    assert!(d.off_diagonal_mass < 1e-6);
    assert!((d.w_origin - d.w_origin_mixture).abs() < 1e-6);
    assert!(d.p > 0.0 && d.p < 1.0);
    assert!((d.grid.integral() - 1.0).abs() < 0.01);
    assert_eq!(xs.len(), 201);
}
