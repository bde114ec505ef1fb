//! Writing an annotation file, reading it back and summarizing it.

use semls::io::{dataset_stats, load_annotations, save_annotations, AnnotatedImage, AnnotationSet};
use semls::segment::CategoryRegistry;
use semls::synth;

fn main() -> semls::Result<()> {
    let registry = CategoryRegistry::default();
    let mut rng = synth::rng(8);
    let images = (0..10)
        .map(|i| {
            let mut img = AnnotatedImage::new(format!("{i:06}"), 1242, 375);
            img.segments = synth::random_scene(&mut rng, 1242.0, 375.0, 20 + 3 * i, registry.len());
            img
        })
        .collect();
    let set = AnnotationSet { images };

    let dir = std::env::temp_dir().join("semls-dataset-stats");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("annotations.jsonl");
    save_annotations(&path, &set, &registry)?;
    let back = load_annotations(&path, &registry)?;
    println!("round trip identical: {}", back == set);

    let s = dataset_stats(&back, &registry)?;
    for (name, n) in &s.per_category {
        println!("{name:<10} {n:>6}");
    }
    println!("{:<10} {:>6}", "total", s.total);
    println!("labels/image {:.2}", s.labels_per_image);
    Ok(())
}
