mod common;

use std::collections::HashMap;

use common::*;
use forge_core::corpus::{
    decontaminate, filter_repeat_docs, find_repeat_spans, repeat_loss_mask, word_frequency_filter,
    NgramSet, RepeatParams, TokenDoc,
};
use forge_core::diagnostics::{flops_estimate, footprint, spike_score, FootprintInput};
use forge_core::mixture::{resolve_mixture, sample_mixture, SourceDecl};
use forge_core::model::{init_checkpoint, soup, z_loss, z_loss_naive, Mat, ModelConfig};
use forge_core::schedule::ScheduleSpec;
use proptest::prelude::*;
use proptest::sample::subsequence;

fn tokens_strategy() -> impl Strategy<Value = (Vec<u32>, usize, usize)> {
    (1u32..=8, 1usize..=5, 2usize..=6).prop_flat_map(|(alphabet, n_max, min_count)| {
        let plain = prop::collection::vec(0..alphabet, 0..=200).boxed();
        let pieces = prop::collection::vec(
            (prop::collection::vec(0..alphabet, 1..=5), 1usize..=10),
            0..=20,
        )
        .prop_map(|ps| {
            let mut t: Vec<u32> = ps.into_iter().flat_map(|(g, k)| g.repeat(k)).collect();
            t.truncate(200);
            t
        })
        .boxed();
        (prop_oneof![plain, pieces], Just(n_max), Just(min_count))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn repeat_spans_match_oracle((tokens, n_max, min_count) in tokens_strategy()) {
        let params = RepeatParams::new(n_max, min_count).unwrap();
        let spans = find_repeat_spans(&tokens, &params);
        prop_assert_eq!(&spans, &ngram_oracle(&tokens, n_max, min_count));
        prop_assert_eq!(repeat_loss_mask(&tokens, &params), mask_from_spans(tokens.len(), &spans));
    }
}

proptest! {
    #[test]
    fn kept_documents_stay_kept((tokens, n_max, min_count) in tokens_strategy()) {
        let params = RepeatParams::new(n_max, min_count).unwrap();
        let doc = TokenDoc::new("d", tokens);
        if filter_repeat_docs(&doc, &params).kept {
            prop_assert!(filter_repeat_docs(&doc.clone(), &params).kept);
        }
    }

    #[test]
    fn distinct_tokens_never_repeat(perm in Just((0u32..150).collect::<Vec<_>>()).prop_shuffle()) {
        let params = RepeatParams::new(5, 2).unwrap();
        prop_assert!(filter_repeat_docs(&TokenDoc::new("d", perm), &params).kept);
    }

    #[test]
    fn word_filter_ignores_order(
        words in prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e", "f", "the"]), 1..60),
        seed in any::<u64>(),
    ) {
        let text = words.join(" ");
        let mut shuffled = words.clone();
        let mut state = seed | 1;
        for i in (1..shuffled.len()).rev() {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            shuffled.swap(i, (state % (i as u64 + 1)) as usize);
        }
        let a = word_frequency_filter("x", &text).unwrap();
        let b = word_frequency_filter("x", &shuffled.join("  \n")).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn empty_eval_set_keeps_everything(tokens in prop::collection::vec(0u32..20, 0..100), threshold in 0.01f64..=1.0) {
        let set = NgramSet::new(8).unwrap();
        prop_assert!(decontaminate(&TokenDoc::new("d", tokens), &set, threshold).unwrap().kept);
    }

    #[test]
    fn mixture_percentages(
        sources in prop::collection::vec((1_000_000u64..1_000_000_000_000, 0.001f64..4.0), 1..8),
        scale in 1u64..1000,
    ) {
        let decls: Vec<SourceDecl> = sources
            .iter()
            .enumerate()
            .map(|(i, &(a, p))| SourceDecl::new(format!("s{i}"), a, p))
            .collect();
        let plan = resolve_mixture(&decls).unwrap();
        let sum: f64 = plan.entries.iter().map(|e| e.mix_pct).sum();
        prop_assert!((sum - 100.0).abs() <= 0.01);

        let scaled: Vec<SourceDecl> = decls
            .iter()
            .map(|d| SourceDecl::new(d.name.clone(), d.available_tokens * scale, d.source_pct))
            .collect();
        let plan2 = resolve_mixture(&scaled).unwrap();
        for (a, b) in plan.entries.iter().zip(&plan2.entries) {
            // equal up to whole-token rounding of the budgets
            prop_assert!((a.mix_pct - b.mix_pct).abs() < 1e-4, "{} vs {}", a.mix_pct, b.mix_pct);
        }
    }

    #[test]
    fn mixture_sampling_seeds(
        lens_a in prop::collection::vec(1usize..40, 1..20),
        lens_b in prop::collection::vec(1usize..40, 1..20),
        pct_a in 0.1f64..3.0,
        repeat in 1u32..4,
        s1 in any::<u64>(),
        s2 in any::<u64>(),
    ) {
        let corpus = |tag: &str, lens: &[usize]| -> Vec<TokenDoc> {
            lens.iter().enumerate().map(|(i, &n)| TokenDoc::new(format!("{tag}{i}"), vec![i as u32; n])).collect()
        };
        let (a, b) = (corpus("a", &lens_a), corpus("b", &lens_b));
        let count = |c: &[TokenDoc]| c.iter().map(|d| d.tokens.len() as u64).sum::<u64>();
        let plan = resolve_mixture(&[
            SourceDecl::new("a", count(&a), pct_a),
            SourceDecl::new("b", count(&b), repeat as f64),
        ]).unwrap();
        let corpora = vec![a, b.clone()];
        let x = sample_mixture(&plan, &corpora, s1).unwrap();
        prop_assert_eq!(&x, &sample_mixture(&plan, &corpora, s1).unwrap());

        let ids = |docs: &[TokenDoc]| {
            let mut v: Vec<String> = docs.iter().map(|d| d.id.clone()).collect();
            v.sort();
            v
        };
        let y = sample_mixture(&plan, &corpora, s2).unwrap();
        prop_assert_eq!(ids(&x), ids(&y));

        let mut per_doc: HashMap<&str, u32> = HashMap::new();
        for d in x.iter().filter(|d| d.id.starts_with('b')) {
            *per_doc.entry(d.id.as_str()).or_default() += 1;
        }
        prop_assert_eq!(per_doc.len(), b.len());
        prop_assert!(per_doc.values().all(|&k| k == repeat));
    }

    #[test]
    fn schedule_shape(
        peak in 1e-5f64..1e-2,
        warmup in 0u64..50,
        tps in 1u64..64,
        horizon_extra in 1u64..100_000,
        cut_frac in 0.05f64..1.0,
        anneal in prop::option::of(1u64..50_000),
    ) {
        let horizon = warmup * tps + horizon_extra;
        let cut = anneal.map(|_| warmup * tps + (horizon_extra as f64 * cut_frac) as u64);
        let s = ScheduleSpec {
            peak_lr: peak,
            warmup_steps: warmup,
            cosine_horizon_tokens: horizon,
            floor_fraction: 0.1,
            truncate_at_tokens: cut,
            anneal_tokens: anneal,
            tokens_per_step: tps,
        };
        let end = horizon + anneal.unwrap_or(0) + 10;
        let mut prev = f64::INFINITY;
        let steps = 400u64;
        for k in 0..=steps {
            let tok = (warmup * tps) as f64 + (end - warmup * tps) as f64 * k as f64 / steps as f64;
            let lr = s.lr_at_tokens(tok).unwrap();
            prop_assert!(lr >= 0.0);
            prop_assert!(lr <= prev * (1.0 + 1e-12), "increase at {tok}: {prev} -> {lr}");
            prev = lr;
        }
        // segment boundaries
        let w = (warmup * tps) as f64;
        if warmup > 0 {
            let below = s.lr_at_tokens(w * (1.0 - 1e-15)).unwrap();
            prop_assert!(((below - peak) / peak).abs() < 1e-12);
        }
        if let (Some(c), Some(a)) = (cut, anneal) {
            let at = s.lr_at_tokens(c as f64).unwrap();
            let after = s.lr_at_tokens(c as f64 + a as f64 * 1e-13).unwrap();
            prop_assert!(at > 0.0 && ((at - after) / at).abs() < 1e-12);
        } else {
            prop_assert_eq!(s.lr_at_tokens(horizon as f64).unwrap(), 0.1 * peak);
        }
        // same token schedule at twice the batch and half the steps
        if warmup % 2 == 0 {
            let doubled = ScheduleSpec { warmup_steps: warmup / 2, tokens_per_step: tps * 2, ..s.clone() };
            for k in 0..50u64 {
                prop_assert_eq!(doubled.lr_at(k).unwrap(), s.lr_at(2 * k).unwrap());
            }
        }
    }

    #[test]
    fn spike_invariances(
        values in prop::collection::vec(-10.0f64..10.0, 30..300),
        window in 2usize..25,
        spikes in prop::collection::vec((0usize..300, -500.0f64..500.0), 0..6),
        shift in -1e3f64..1e3,
        scale in 1e-2f64..1e2,
        pow in -20i32..20,
    ) {
        let mut s = values;
        for (i, v) in spikes {
            let n = s.len();
            s[i % n] += v;
        }
        let base = spike_score(&s, window, 7.0).unwrap();
        let exact: Vec<f64> = s.iter().map(|x| x * 2f64.powi(pow)).collect();
        prop_assert_eq!(&spike_score(&exact, window, 7.0).unwrap().spike_indices, &base.spike_indices);

        // general shifts and scales are compared away from the threshold
        let margin_ok = (window..s.len()).all(|i| {
            let (mean, std) = forge_core::diagnostics::window_stats(&s[i - window..i]);
            std > 1e-6 && ((s[i] - mean).abs() / std - 7.0).abs() > 1e-6
        });
        prop_assume!(margin_ok);
        let shifted: Vec<f64> = s.iter().map(|x| x + shift).collect();
        let scaled: Vec<f64> = s.iter().map(|x| x * scale).collect();
        prop_assert_eq!(&spike_score(&shifted, window, 7.0).unwrap().spike_indices, &base.spike_indices);
        prop_assert_eq!(&spike_score(&scaled, window, 7.0).unwrap().spike_indices, &base.spike_indices);
        prop_assert!((0.0..=1.0).contains(&base.spike_score));
        prop_assert!(base.spike_indices.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(base.spike_indices.iter().all(|&i| i >= window));
    }

    #[test]
    fn calculators_are_linear(
        n in 0.0f64..1e12, t in 0.0f64..1e13, k in 0.0f64..100.0,
        mwh in 0.0f64..1e4, pue in 1.0f64..3.0, ci in 0.0f64..1.0, on in 0.0f64..5.0, off in 0.0f64..5.0,
    ) {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1e-300);
        let f = flops_estimate(n, t).unwrap();
        prop_assert!(close(flops_estimate(k * n, t).unwrap(), k * f));
        prop_assert!(close(flops_estimate(n, k * t).unwrap(), k * f));

        let input = FootprintInput {
            gpu_power_mwh: mwh,
            pue,
            carbon_intensity_kg_per_kwh: ci,
            wue_onsite_l_per_kwh: on,
            wue_offsite_l_per_kwh: off,
        };
        let base = footprint(&input).unwrap();
        let more_power = footprint(&FootprintInput { gpu_power_mwh: k * mwh, ..input }).unwrap();
        prop_assert!(close(more_power.co2_tonnes, k * base.co2_tonnes) && close(more_power.water_kl, k * base.water_kl));
        let dirtier = footprint(&FootprintInput { carbon_intensity_kg_per_kwh: k * ci, ..input }).unwrap();
        prop_assert!(close(dirtier.co2_tonnes, k * base.co2_tonnes));
        let wetter = footprint(&FootprintInput { wue_onsite_l_per_kwh: k * on, wue_offsite_l_per_kwh: k * off, ..input }).unwrap();
        prop_assert!(close(wetter.water_kl, k * base.water_kl));
        let overhead = footprint(&FootprintInput { pue: pue * (1.0 + k), ..input }).unwrap();
        prop_assert!(close(overhead.co2_tonnes, (1.0 + k) * base.co2_tonnes));
    }

    #[test]
    fn z_loss_shift_matches_naive(rows in 1usize..6, cols in 2usize..20, seed in any::<u64>(), w in 1e-5f64..1.0) {
        let m: Mat<f64> = random_mat(rows, cols, seed).map(|x| 3.0 * x);
        let (a, b) = (z_loss(&m, w), z_loss_naive(&m, w));
        prop_assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn soup_ignores_argument_order(k in 1usize..5, seeds in subsequence((0u64..8).collect::<Vec<_>>(), 1..5), seed in any::<u64>()) {
        let cfg = ModelConfig::tiny(8, 1, 2, 11, 4);
        let c = init_checkpoint(&cfg, seed).unwrap();
        prop_assert_eq!(&soup(&vec![c.clone(); k]).unwrap(), &c);

        let cs: Vec<_> = seeds.iter().map(|&s| init_checkpoint(&cfg, s).unwrap()).collect();
        let a = soup(&cs).unwrap();
        let mut rev = cs.clone();
        rev.reverse();
        rev.rotate_left(seed as usize % cs.len());
        prop_assert_eq!(a, soup(&rev).unwrap());
    }
}
