use std::collections::BTreeSet;

use fiqa_core::data::{
    preprocess_rgb, split_dataset, ManifestEntry, SplitSpec, IMAGENET_MEAN, IMAGENET_STD, INPUT_SIZE,
};
use image::{Rgb, RgbImage};

fn entries(n: usize) -> Vec<ManifestEntry> {
    (0..n)
        .map(|i| ManifestEntry {
            image_id: format!("img{i}"),
            path: format!("img{i}.png").into(),
            mos: i as f64,
        })
        .collect()
}

fn val_ids(seed: u64) -> BTreeSet<String> {
    let e = entries(10);
    let s = split_dataset(&e, &SplitSpec { train_fraction: 0.8, seed }).unwrap();
    assert_eq!((s.train.len(), s.val.len()), (8, 2));
    let train: BTreeSet<String> = s.train.iter().map(|x| x.image_id.clone()).collect();
    let val: BTreeSet<String> = s.val.iter().map(|x| x.image_id.clone()).collect();
    assert!(train.is_disjoint(&val));
    let all: BTreeSet<String> = e.iter().map(|x| x.image_id.clone()).collect();
    assert_eq!(train.union(&val).cloned().collect::<BTreeSet<_>>(), all);
    val
}

#[test]
fn different_seeds_give_different_valid_splits() {
    let (a, b) = (val_ids(7), val_ids(8));
    assert_eq!(a, val_ids(7));
    assert_ne!(a, b);
}

#[test]
fn arbitrary_sizes_map_to_network_input() {
    for (w, h) in [(700, 1000), (200, 300), (416, 600)] {
        let img = RgbImage::from_fn(w, h, |x, y| Rgb([(x % 256) as u8, (y % 256) as u8, ((x + y) % 256) as u8]));
        let t = preprocess_rgb(&img, INPUT_SIZE);
        assert_eq!(t.shape(), &[3, INPUT_SIZE.0, INPUT_SIZE.1]);
        assert!(t.all_finite());
    }
}

#[test]
fn black_input_standardizes_per_channel() {
    let img = RgbImage::new(INPUT_SIZE.1 as u32, INPUT_SIZE.0 as u32);
    let t = preprocess_rgb(&img, INPUT_SIZE);
    let plane = INPUT_SIZE.0 * INPUT_SIZE.1;
    for c in 0..3 {
        let expected = -IMAGENET_MEAN[c] / IMAGENET_STD[c];
        assert!(t.data()[c * plane..(c + 1) * plane].iter().all(|&v| (v - expected).abs() < 1e-6));
    }
}
