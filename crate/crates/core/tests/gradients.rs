mod common;

use common::*;
use rdl_core::losses::{align_loss, total_loss, CprdForm, DistillPlan};
use rdl_core::numerics::{check_gradient, Rng};
use rdl_core::synthworld::teacher::{itm_objective, ItmPair};

const INSTANCES: usize = 120;

fn worst<F: FnMut(&mut Rng) -> f64>(seed: u64, mut f: F) -> f64 {
    let mut rng = Rng::new(seed);
    (0..INSTANCES).map(|_| f(&mut rng)).fold(0.0, f64::max)
}

#[test]
fn align_gradient() {
    let e = worst(1, |rng| {
        let inst = instance(rng, 0);
        check_model_loss(&inst.model, |m| align_of(&inst, m))
    });
    assert!(e < GRAD_TOL, "max rel err {e}");
}

#[test]
fn cprd_gradient() {
    let e = worst(2, |rng| {
        let inst = instance(rng, 1);
        let plan = random_cprd_plan(rng, &inst, CprdForm::Full);
        check_model_loss(&inst.model, |m| distill_of(&inst, m, &plan))
    });
    assert!(e < GRAD_TOL, "max rel err {e}");
}

#[test]
fn cprd_variant_hat_gradient() {
    let e = worst(3, |rng| {
        let inst = instance(rng, 1);
        let plan = random_cprd_plan(rng, &inst, CprdForm::Truncated);
        check_model_loss(&inst.model, |m| distill_of(&inst, m, &plan))
    });
    assert!(e < GRAD_TOL, "max rel err {e}");
}

#[test]
fn kl_gradient() {
    let e = worst(4, |rng| {
        let inst = instance(rng, 0);
        let plan = DistillPlan::Kl {
            teacher_temp: 0.1 + rng.uniform(),
            queries: random_scored(rng, &inst, 0),
        };
        check_model_loss(&inst.model, |m| distill_of(&inst, m, &plan))
    });
    assert!(e < GRAD_TOL, "max rel err {e}");
}

#[test]
fn m3se_gradient() {
    let e = worst(5, |rng| {
        let inst = instance(rng, 1);
        let plan = DistillPlan::M3se {
            rescale: false,
            queries: random_scored(rng, &inst, 1),
        };
        check_model_loss(&inst.model, |m| distill_of(&inst, m, &plan))
    });
    assert!(e < GRAD_TOL, "max rel err {e}");
}

#[test]
fn r_m3se_gradient() {
    let e = worst(6, |rng| {
        let inst = instance(rng, 1);
        let plan = DistillPlan::M3se {
            rescale: true,
            queries: random_scored(rng, &inst, 1),
        };
        check_model_loss(&inst.model, |m| distill_of(&inst, m, &plan))
    });
    assert!(e < GRAD_TOL, "max rel err {e}");
}

#[test]
fn total_gradient_is_additive() {
    let e = worst(7, |rng| {
        let inst = instance(rng, 1);
        let plan = random_cprd_plan(rng, &inst, CprdForm::Full);
        check_model_loss(&inst.model, |m| total_of(&inst, m, &plan))
    });
    assert!(e < GRAD_TOL, "max rel err {e}");
}

#[test]
fn itm_gradient() {
    let e = worst(8, |rng| {
        let pairs: Vec<ItmPair> = (0..1 + rng.below(30))
            .map(|_| ItmPair {
                relevance: rng.uniform(),
                matched: rng.below(2) == 0,
            })
            .collect();
        let p = [0.5 + 40.0 * rng.uniform(), 0.1 + 0.8 * rng.uniform()];
        let (_, g) = itm_objective(p[0], p[1], &pairs);
        check_gradient(|x| itm_objective(x[0], x[1], &pairs).0, &p, &g, GRAD_TOL)
            .unwrap()
            .max_rel_error
    });
    assert!(e < GRAD_TOL, "max rel err {e}");
}

#[test]
fn none_total_equals_align_bitwise() {
    let mut rng = Rng::new(9);
    for _ in 0..50 {
        let inst = instance(&mut rng, 0);
        let a = align_loss(&inst.model, &inst.batch, &inst.view).unwrap();
        assert_eq!(total_loss(a.clone(), None).unwrap(), a);
    }
}

#[test]
fn temperature_outside_clamp_is_rejected() {
    let mut rng = Rng::new(10);
    let mut inst = instance(&mut rng, 0);
    inst.model.log_temperature = 2.0f64.ln();
    assert!(align_loss(&inst.model, &inst.batch, &inst.view).is_err());
}
