use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use copol::estimators::{FixedEffects, ModelClass, ModelSpec, Specification};
use copol::policy::draw_policies;
use copol::runner::{derive_seed, run_replication, DataCell};
use copol::{apply_effects, fit_policy_model, synth_panel, EffectSpec, GapCondition, OrderingMode, PanelContext, PhaseIn, SynthConfig};

fn fits(c: &mut Criterion) {
    let panel = synth_panel(&SynthConfig::default()).unwrap();
    let mut rng = derive_seed(1, 0, 0);
    let draw = draw_policies(&panel, 30, &GapCondition::C2, OrderingMode::Random, PhaseIn::Instantaneous, &mut rng).unwrap();
    let tp = apply_effects(&panel, &draw.exposures, &EffectSpec::new(-0.1, -0.1)).unwrap();

    let mut group = c.benchmark_group("fit");
    for class in [ModelClass::Ar, ModelClass::Did] {
        for fe in [FixedEffects::Absorbed, FixedEffects::Dummies] {
            let spec = ModelSpec {
                fixed_effects: fe,
                ..ModelSpec::new(class, Specification::Correct)
            };
            group.bench_function(format!("{class}/{fe:?}"), |b| {
                b.iter(|| fit_policy_model(black_box(&tp), &draw.exposures, &spec).unwrap())
            });
        }
    }
    group.finish();
}

fn replication(c: &mut Criterion) {
    let ctx = PanelContext::new(synth_panel(&SynthConfig::default()).unwrap());
    let cell = DataCell {
        effects: EffectSpec::new(-0.1, -0.1),
        gap: GapCondition::C2,
        n_treated: 30,
        phase_in: PhaseIn::Instantaneous,
        ordering: OrderingMode::Random,
    };
    let models: Vec<ModelSpec> = [ModelClass::Ar, ModelClass::Did]
        .into_iter()
        .flat_map(|m| [Specification::Correct, Specification::Misspecified].map(|s| ModelSpec::new(m, s)))
        .collect();
    let mut rep = 0u64;
    c.bench_function("replication/4 models", |b| {
        b.iter(|| {
            rep += 1;
            run_replication(&ctx, &cell, &models, 7, 0, rep)
        })
    });
}

criterion_group!(benches, fits, replication);
criterion_main!(benches);
