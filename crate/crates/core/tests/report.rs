// SPDX-License-Identifier: MIT OR Apache-2.0

use biasheads::bias::BiasScoreMap;
use biasheads::report::{bias_scores_csv, heatmap_svg, histogram_csv, parse_bias_scores_csv, HISTOGRAM_BINS};
use proptest::prelude::*;

fn shaded(svg: &str) -> Vec<String> {
    svg.lines()
        .filter(|l| l.contains("stroke=\"#cccccc\"") && !l.contains("fill=\"#ffffff\""))
        .map(str::to_string)
        .collect()
}

#[test]
fn zero_scores_give_a_white_grid() {
    let map = BiasScoreMap::new(3, 4, vec![0.0f64; 12]).unwrap();
    assert!(shaded(&heatmap_svg(&map)).is_empty());
    assert_eq!(heatmap_svg(&map).matches("#ffffff").count(), 12);
}

#[test]
fn one_positive_score_shades_one_cell() {
    let mut s = vec![-0.2f64; 12];
    s[2 * 4 + 1] = 0.7;
    let svg = heatmap_svg(&BiasScoreMap::new(3, 4, s).unwrap());
    let cells = shaded(&svg);
    assert_eq!(cells.len(), 1);
    assert!(cells[0].contains("fill=\"#ff0000\""));
    // layer 3 row, head 2 column
    assert!(cells[0].contains("x=\"84\" y=\"120\""), "{}", cells[0]);
    assert!(svg.contains(">3-2</text>"));
}

#[test]
fn histogram_has_fixed_bins_and_counts_everything() {
    let map = BiasScoreMap::new(2, 3, vec![-1.0f64, 0.0, 0.5, 0.5, 1.0, 3.0]).unwrap();
    let csv = histogram_csv(&map);
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), HISTOGRAM_BINS);
    let total: usize = rows.iter().map(|r| r.rsplit(',').next().unwrap().parse::<usize>().unwrap()).sum();
    assert_eq!(total, 6);
    assert!(rows[0].starts_with("1,-1,"));
    assert!(rows[HISTOGRAM_BINS - 1].ends_with(",3,1"));
}

#[test]
fn malformed_csv_is_rejected() {
    for text in [
        "layer,head,bias_score\n1,1,0.5\n1,1,0.2\n",
        "layer,head,bias_score\n1,1,0.5\n2,2,0.1\n",
        "layer,head,bias_score\n0,1,0.5\n",
        "layer,head,bias_score\n1,1,x\n",
        "layer,head,bias_score\n",
    ] {
        assert!(parse_bias_scores_csv(text).is_err(), "{text}");
    }
}

proptest! {
    #[test]
    fn reingested_csv_reproduces_the_heatmap(
        (l, h, s) in (1usize..5, 1usize..6).prop_flat_map(|(l, h)| (Just(l), Just(h), prop::collection::vec(-1.0f32..1.0, l * h)))
    ) {
        let map = BiasScoreMap::new(l, h, s).unwrap();
        let csv = bias_scores_csv(&map);
        let back = parse_bias_scores_csv(&csv).unwrap();
        prop_assert_eq!(heatmap_svg(&back), heatmap_svg(&map));
        prop_assert_eq!(histogram_csv(&back), histogram_csv(&map));
        prop_assert_eq!(bias_scores_csv(&back), csv);
    }
}
