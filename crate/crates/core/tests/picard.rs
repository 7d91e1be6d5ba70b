use kinfluid::coupling::fluid_distance;
use kinfluid::kinetic::{sample_initial, FluidProfile, FourierMode, ParticleProfile};
use kinfluid::{CflLimits, GridSpec, InitialData, PowerLaw, StepStatus, Stepper, SystemState};

fn smooth_state() -> SystemState {
    let g = GridSpec::new(3, 8).unwrap();
    let spec = InitialData {
        particles: ParticleProfile::Maxwellian {
            drift: vec![0.3, 0.0, -0.2],
            sigma: 0.4,
            density_amplitude: 0.2,
            density_mode: vec![0, 1, 1],
            follow_fluid: false,
        },
        fluid: FluidProfile {
            mean: vec![0.1, 0.0, 0.0],
            modes: vec![
                FourierMode {
                    k: vec![0, 1, 0],
                    cos: vec![0.4, 0.0, 0.2],
                    sin: vec![],
                },
                FourierMode {
                    k: vec![1, 1, 0],
                    cos: vec![],
                    sin: vec![0.2, -0.2, 0.1],
                },
            ],
        },
        velocity_cutoff: 0.0,
        seed: 3,
    };
    let fluid = spec.fluid_state(&g, 0.0).unwrap();
    SystemState::new(fluid, sample_initial(&spec, 3, 4000).unwrap(), 0.0).unwrap()
}

fn stepper() -> Stepper {
    Stepper::new(PowerLaw::new(1.0, 2.5, 0.0).unwrap(), CflLimits::default())
}

#[test]
fn coupled_iteration_contracts_geometrically() {
    let s = smooth_state();
    let (out, rep) = stepper().step_picard(&s, 1e-3, 1e-13, 30).unwrap();
    assert!(rep.converged, "{:?}", rep.residuals);
    assert_eq!(out.status, StepStatus::Ok);
    let factors = rep.contraction_factors();
    assert!(!factors.is_empty());
    assert!(factors.iter().all(|&f| f < 1.0), "{factors:?}");
}

#[test]
fn coupled_iteration_agrees_with_splitting_to_second_order() {
    let s = smooth_state();
    let st = stepper();
    let gap = |dt: f64| {
        let split = st.step_splitting(&s, dt).unwrap();
        let (pic, _) = st.step_picard(&s, dt, 1e-14, 50).unwrap();
        fluid_distance(&split.fluid, &pic.fluid)
    };
    let (g1, g2) = (gap(1e-3), gap(5e-4));
    assert!(g1 < 1e-4, "{g1}");
    let ratio = g2 / g1;
    assert!((0.2..0.3).contains(&ratio), "ratio {ratio}, gaps {g1} {g2}");
}
