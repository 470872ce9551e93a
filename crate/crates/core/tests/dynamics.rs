use caesn::dynsys::{
    kinetic_energy, lt_to_time, sample_initial_states, ActionSet, ControlAction, DatasetConfig, Integrator,
    MfeParams, Schedule, StateVector, N_MODES,
};
use caesn::exec::Execution;

fn params() -> MfeParams {
    MfeParams {
        reynolds: ActionSet::new(vec![400.0, 2000.0]).unwrap(),
        ..MfeParams::default()
    }
}

fn end_state(integ: &Integrator, q0: &StateVector, sched: &Schedule, dt: f64) -> StateVector {
    *integ.integrate_with_dt(q0, sched, 10.0, dt).unwrap().last_state().unwrap()
}

fn distance(a: &StateVector, b: &StateVector) -> f64 {
    (0..N_MODES).map(|j| (a[j] - b[j]).powi(2)).sum::<f64>().sqrt()
}

#[test]
fn fourth_order_under_switching() {
    let p = params();
    let integ = Integrator::new(p.clone()).unwrap();
    let q0 = sample_initial_states(1, 77, &p, &DatasetConfig::default(), 1.0, Execution::Sequential).unwrap()[0];
    // Switches on the coarsest grid keep the scheme's order.
    let sched = Schedule::piecewise(vec![
        (0.0, ControlAction::new(400.0)),
        (2.5, ControlAction::new(2000.0)),
        (5.0, ControlAction::new(400.0)),
    ])
    .unwrap();
    let reference = end_state(&integ, &q0, &sched, 0.25 / 512.0);
    let errors: Vec<f64> = [0.25, 0.125, 0.0625]
        .iter()
        .map(|&dt| distance(&end_state(&integ, &q0, &sched, dt), &reference))
        .collect();
    for w in errors.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!((3.5..=4.5).contains(&order), "order {order} from {errors:?}");
    }
}

#[test]
fn laminar_state_is_fixed_at_every_level() {
    let p = params();
    let integ = Integrator::new(p.clone()).unwrap();
    let lam = StateVector::laminar();
    for re in [400.0, 2000.0, 4000.0] {
        let tr = integ
            .integrate(&lam, &Schedule::constant(ControlAction::new(re)), lt_to_time(10.0))
            .unwrap();
        assert!(tr.states.iter().all(|q| distance(q, &lam) <= 1e-8));
        assert!(tr.k.iter().all(|&k| k == kinetic_energy(&lam)));
    }
}

#[test]
fn sampling_grid_covers_the_span() {
    let p = params();
    let integ = Integrator::new(p.clone()).unwrap();
    let tr = integ
        .integrate(&StateVector::laminar(), &Schedule::constant(p.reynolds.base()), lt_to_time(1.0))
        .unwrap();
    assert_eq!(tr.len(), p.samples_in(lt_to_time(1.0)) + 1);
    assert!(tr.times.windows(2).all(|w| (w[1] - w[0] - p.sample_dt).abs() < 1e-9));
}
