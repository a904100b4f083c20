use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use eventcast_core::dataset::{generate_synthetic, SyntheticSpec};
use eventcast_core::gateway::{parse_choice, Choice};
use eventcast_core::history::{build_rule_history, Format, HistoryParams, Task};
use eventcast_core::model::{ComplexEventId, Document, DocumentId, EntityId, RelativeDay};
use eventcast_core::question_bank::{assemble_mcq, make_query, McqOption, Provenance, Strategy as Sampling};
use eventcast_core::retrieval::{chunk_documents, rank_bm25, LexicalIndex, Scope, ScopeKind, ScopeRef};

fn doc(id: u32, t: u32, body: String) -> Document {
    Document {
        doc_id: DocumentId(id),
        t: RelativeDay(t),
        complex_event: ComplexEventId(0),
        title: String::new(),
        body,
        summary: None,
    }
}

fn word() -> impl Strategy<Value = String> {
    prop::sample::select(vec!["army", "talks", "border", "aid", "envoy", "strike", "rally", "court"])
        .prop_map(str::to_owned)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn chunks_cover_the_body_in_order(
        words in prop::collection::vec(word(), 0..120),
        size in 2usize..40,
        overlap_frac in 0.0f64..0.9,
    ) {
        let overlap = ((size as f64) * overlap_frac) as usize;
        let d = doc(0, 0, words.join(" "));
        let chunks = chunk_documents([&d], size, overlap).unwrap();
        let mut rebuilt: Vec<String> = Vec::new();
        for (i, c) in chunks.iter().enumerate() {
            prop_assert!(c.token_count <= size && c.token_count > 0);
            let toks: Vec<String> = c.text.split_whitespace().map(str::to_owned).collect();
            prop_assert_eq!(toks.len(), c.token_count);
            let skip = if i == 0 { 0 } else { overlap };
            prop_assert_eq!(&rebuilt[rebuilt.len() - skip..], &toks[..skip]);
            rebuilt.extend(toks.into_iter().skip(skip));
        }
        prop_assert_eq!(rebuilt, words);
    }

    #[test]
    fn bm25_ranking_is_positive_sorted_and_prefix_stable(
        bodies in prop::collection::vec((prop::collection::vec(word(), 1..20), 0u32..5), 1..15),
        query in prop::collection::vec(word(), 1..4),
        k in 1usize..10,
    ) {
        let docs: Vec<Document> = bodies
            .into_iter()
            .enumerate()
            .map(|(i, (w, t))| doc(i as u32, t, w.join(" ")))
            .collect();
        let chunks = chunk_documents(&docs, 50, 0).unwrap();
        let index = LexicalIndex::build(&chunks);
        let query = query.join(" ");
        let all = rank_bm25(&index, &query, usize::MAX);
        for w in all.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            prop_assert!(
                a.score > b.score
                    || (a.score == b.score && (a.chunk.t > b.chunk.t
                        || (a.chunk.t == b.chunk.t && a.chunk.chunk_id < b.chunk.chunk_id)))
            );
        }
        prop_assert!(all.iter().all(|h| h.score > 0.0));
        let top = rank_bm25(&index, &query, k);
        prop_assert_eq!(top.len(), all.len().min(k));
        for (a, b) in top.iter().zip(&all) {
            prop_assert_eq!(a.chunk.chunk_id, b.chunk.chunk_id);
        }
    }

    #[test]
    fn complex_event_scope_admits_a_subset_of_global(
        t in 0u32..200, ref_t in 0u32..200, ce in 0u32..4, ref_ce in 0u32..4,
        window in prop::option::of(0u32..100),
    ) {
        let scope = |kind| Scope {
            kind,
            window_days: window,
            reference: ScopeRef { subject: EntityId(0), t: RelativeDay(ref_t), complex_event: ComplexEventId(ref_ce) },
        };
        let (day, c) = (RelativeDay(t), ComplexEventId(ce));
        prop_assert!(!scope(ScopeKind::None).admits(day, c));
        if scope(ScopeKind::ComplexEvent).admits(day, c) {
            prop_assert!(scope(ScopeKind::Global).admits(day, c));
        }
        if scope(ScopeKind::Global).admits(day, c) {
            prop_assert!(t < ref_t);
        }
    }

    #[test]
    fn assembled_questions_keep_every_option_once(seed in any::<u64>()) {
        let ds = generate_synthetic(&SyntheticSpec::small(1)).unwrap();
        let e = ds.events().next().unwrap().clone();
        let names: Vec<String> = (0..6).map(|i| format!("Option {i}")).collect();
        let gold = McqOption { text: names[0].clone(), id: Some(0), provenance: Provenance::Gold };
        let distractors: Vec<McqOption> = names[1..]
            .iter()
            .map(|s| McqOption { text: s.clone(), id: None, provenance: Provenance::Global })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = assemble_mcq(1, make_query(&e, Task::Object), gold, distractors, Sampling::Global, seed, &mut rng)
            .unwrap();
        q.check().unwrap();
        prop_assert_eq!(&q.gold().text, &names[0]);
        let texts: BTreeSet<String> = q.option_texts().into_iter().collect();
        prop_assert_eq!(texts, names.into_iter().collect::<BTreeSet<_>>());
    }

    #[test]
    fn a_lone_label_parses_as_itself(i in 0usize..6, pre in "[ .:(]{0,3}", post in "[ .:)]{0,3}") {
        let options: Vec<String> = ["Kiro Army", "Sela Court", "Dano Police", "Miva Envoy", "Tal Guard", "Oru Party"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let label = (b'A' + i as u8) as char;
        prop_assert_eq!(parse_choice(&format!("{pre}{label}{post}"), &options), Choice::Label(label));
    }

    #[test]
    fn rule_history_stays_before_the_cutoff(
        seed in 0u64..40,
        horizon in 1u32..15,
        pick in any::<prop::sample::Index>(),
        length in prop::sample::select(vec![3u32, 7, 15, 30, 90]),
        format in prop::sample::select(vec![Format::Graph, Format::Text, Format::Mixed]),
    ) {
        let ds = generate_synthetic(&SyntheticSpec::small(seed)).unwrap();
        let events: Vec<_> = ds.events().cloned().collect();
        let e = pick.get(&events);
        let q = make_query(e, Task::Object);
        let params = HistoryParams { history_length: length, ..HistoryParams::default() };
        let bundle = build_rule_history(&ds, &q.at_horizon(horizon), &params, format, None).unwrap();
        for d in bundle.item_days() {
            prop_assert!(d.0 + horizon <= q.t.0);
            prop_assert!(d.0 + horizon + length > q.t.0);
        }
    }
}
