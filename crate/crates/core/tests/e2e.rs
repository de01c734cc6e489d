mod common;

use imba_lens::alignment::{aggregate_alignment, score_pairs};
use imba_lens::cam::{CamOrder, HeadWeights};
use imba_lens::dissection::{channel_thresholds, concept_report, Connectivity, DissectionConfig};
use imba_lens::tensor_io::{load_annotations, Manifest};

fn load() -> (Manifest, imba_lens::tensor_io::AnnotationSet, HeadWeights) {
    let dir = common::e2e_dir();
    let manifest = Manifest::load(dir.join("manifest.json")).unwrap();
    let boxes = load_annotations(dir.join("boxes.csv"), &manifest).unwrap();
    let head = HeadWeights::load(dir.join("head.fmap"), None).unwrap();
    (manifest, boxes, head)
}

#[test]
fn pair_scores_match_fixture_exactly() {
    let (manifest, boxes, head) = load();
    let pairs = score_pairs(&manifest, &boxes, &head, CamOrder::NormalizeFirst).unwrap();
    let expected = common::expected().pairs;
    assert_eq!(pairs.len(), expected.len());
    for (got, want) in pairs.iter().zip(&expected) {
        assert_eq!(got.image_id, want.image_id);
        assert_eq!(manifest.class_names[got.class_index], want.class);
        assert_eq!(got.score.iobb, want.iobb, "{want:?}");
        assert_eq!(got.score.ior, want.ior, "{want:?}");
    }
}

#[test]
fn alignment_report_averages_pairs() {
    let (manifest, boxes, head) = load();
    let report = aggregate_alignment(&manifest, &boxes, &head, CamOrder::NormalizeFirst).unwrap();
    let expected = common::expected().pairs;
    let n = expected.len() as f64;
    let mean_iobb = expected.iter().map(|p| p.iobb).sum::<f64>() / n;
    assert_eq!(report.overall.mean_iobb, mean_iobb);
    let nodule = report
        .per_class
        .iter()
        .find(|c| c.class == "Nodule")
        .unwrap();
    assert_eq!(nodule.n_pairs, 2);
    assert_eq!(report.zero_mass_count, 0);
}

#[test]
fn concept_counts_match_fixture_exactly() {
    let (manifest, boxes, _) = load();
    for want in common::expected().dissection {
        let conn = Connectivity::try_from(want.connectivity).unwrap();
        let config = DissectionConfig::new(want.q, conn).unwrap();
        let thresholds = channel_thresholds(&manifest, &config).unwrap();
        assert_eq!(thresholds.tau, want.tau, "q={}", want.q);
        let report = concept_report(&manifest, &boxes, &thresholds, &config).unwrap();
        assert_eq!(report.n_images, 2);
        assert_eq!(
            (report.disjoint, report.unique),
            (want.disjoint, want.unique),
            "{want:?}"
        );
    }
}

#[test]
fn fixture_logits_agree_with_head() {
    let (manifest, _, head) = load();
    for entry in &manifest.entries {
        let stack = manifest.load_features(entry).unwrap();
        let logits = manifest.load_logits(entry).unwrap();
        let recomputed = head.logits(&stack).unwrap();
        for (a, b) in logits.iter().zip(&recomputed) {
            assert_eq!(*a as f64, *b);
        }
    }
}
