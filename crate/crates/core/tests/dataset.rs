use std::collections::BTreeSet;

use glyph_decomp::{DecompositionTable, ReferenceMapping, SAMPLE_TABLE, TOY_TABLE};
use glyphgen_core::glyphsynth::{build_dataset, make_dataset, render_glyph, style_bank, DatasetSpec, StyleParams};
use glyphgen_core::trainer::Trainer;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn sample() -> DecompositionTable {
    DecompositionTable::parse(SAMPLE_TABLE).unwrap()
}

#[test]
fn desk_dataset_shape_and_splits() {
    let table = sample();
    let data = build_dataset(&table, &DatasetSpec::default()).unwrap();
    assert_eq!(data.chars.len(), 40);
    assert_eq!(data.styles.len(), 8);
    assert_eq!(data.len(), 8 * 40);
    assert_eq!(table.components().len(), 12);
    assert_eq!(data.unseen_chars.len(), 8);
    assert_eq!(data.train_pairs().len(), 6 * 32);
    assert_eq!(data.pairs(false, false).len(), 2 * 8);
    for r in &data.references {
        assert!(!data.unseen_chars.contains(r), "reference {r} is held out");
    }
    for c in 0..data.chars.len() {
        assert_eq!(data.mapped_refs(c).len(), 3);
    }
}

#[test]
fn content_image_is_shared_across_styles() {
    let data = build_dataset(&sample(), &DatasetSpec::default()).unwrap();
    for s in data.samples() {
        let a = data.content_image(s.content);
        assert_eq!(a.style_id, "neutral");
        assert_eq!(a.content_id, data.chars[s.content]);
    }
    assert_ne!(data.glyph(0, 0).pixels, data.glyph(1, 0).pixels);
}

#[test]
fn same_seed_same_dataset() {
    let spec = DatasetSpec { seed: 9, ..DatasetSpec::default() };
    let a = build_dataset(&sample(), &spec).unwrap();
    let b = build_dataset(&sample(), &spec).unwrap();
    assert_eq!(a, b);
}

#[test]
fn ink_grows_with_stroke_width() {
    let table = sample();
    for glyph in ["g01", "g07", "g20", "g38"] {
        let mut last = 0.0;
        for w in [1.0, 1.5, 2.0, 2.5, 3.0, 3.5] {
            let style = StyleParams { stroke_width: w, ..StyleParams::neutral() };
            let ink = render_glyph(&table, glyph, "t", &style, 32).unwrap().ink_fraction();
            assert!(ink > last, "{glyph}: width {w} gives {ink} after {last}");
            last = ink;
        }
    }
}

#[test]
fn mapping_must_cover_every_character() {
    let table = DecompositionTable::parse(TOY_TABLE).unwrap();
    let styles = style_bank(2, 1, 0);
    let chars = vec!["g1".to_string(), "g2".to_string()];
    let mut mapping = ReferenceMapping::new(1);
    mapping.insert("g1".into(), vec!["g1".into()]).unwrap();
    let res = make_dataset(&table, &styles, &chars, &BTreeSet::new(), &["g1".into()], &mapping, 32, 0);
    assert!(res.is_err());
    mapping.insert("g2".into(), vec!["g1".into()]).unwrap();
    assert!(make_dataset(&table, &styles, &chars, &BTreeSet::new(), &["g1".into()], &mapping, 32, 0).is_ok());
}

#[test]
fn save_and_load_round_trip() {
    let spec = DatasetSpec { styles: 3, seen_styles: 2, ..DatasetSpec::default() };
    let data = build_dataset(&sample(), &spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    data.save(dir.path()).unwrap();
    assert!(dir.path().join("images/s1/g05.png").exists());
    assert!(dir.path().join("masks/neutral/g05.png").exists());
    let meta = std::fs::read_to_string(dir.path().join("meta.tsv")).unwrap();
    assert_eq!(meta.lines().count(), 1 + 4 * 40);
    assert_eq!(glyphgen_core::glyphsynth::Dataset::load(dir.path()).unwrap(), data);
}

#[test]
fn description_round_trip() {
    let data = build_dataset(&sample(), &DatasetSpec { styles: 3, seen_styles: 2, ..DatasetSpec::default() }).unwrap();
    let meta: std::collections::BTreeMap<String, String> = data.describe().into_iter().collect();
    let back = glyphgen_core::glyphsynth::Dataset::from_description(|k| {
        meta.get(k)
            .map(String::as_str)
            .ok_or_else(|| glyphgen_core::CoreError::Data(k.to_string()))
    })
    .unwrap();
    assert_eq!(back.table, data.table, "table");
    assert_eq!(back.chars, data.chars, "chars");
    assert_eq!(back.styles, data.styles, "styles");
    assert_eq!(back.unseen_chars, data.unseen_chars, "unseen");
    assert_eq!(back.references, data.references, "refs");
    assert_eq!(back.mapping, data.mapping, "mapping");
    assert_eq!(back, data);
}

#[test]
fn random_references_share_a_component_and_skip_self() {
    let data = build_dataset(&sample(), &DatasetSpec::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for c in 0..data.chars.len() {
        let refs = Trainer::pick_refs(&data, false, 3, c, &mut rng).unwrap();
        assert_eq!(refs.len(), 3);
        let pool = data.sharing_pool(c).unwrap();
        for r in refs {
            assert!(data.is_seen_char(r));
            if pool.iter().any(|&p| p != c) {
                assert!(pool.contains(&r) && r != c);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn pixels_in_unit_range_and_masks_on_ink(seed in any::<u64>(), glyph in 0usize..40) {
        let table = sample();
        let style = &style_bank(1, 1, seed)[0];
        let name = format!("g{:02}", glyph + 1);
        let img = render_glyph(&table, &name, "s", &style.params, 32).unwrap();
        let labels = table.atom_labels();
        let allowed: BTreeSet<u8> = table.atoms_of(&name).unwrap().iter().map(|a| labels[a]).collect();
        for (&p, &m) in img.pixels.iter().zip(&img.mask) {
            prop_assert!((0.0..=1.0).contains(&p));
            prop_assert_eq!(p > 0.0, m != 0);
            prop_assert!(m == 0 || allowed.contains(&m));
        }
    }
}
