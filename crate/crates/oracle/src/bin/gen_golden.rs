//! Regenerates testdata/golden_metrics.json from the brute-force oracle.
//! Usage: gen-golden <output-path>

use boocap_oracle::golden;

fn main() {
    let path = std::env::args()
        .nth(1)
        .expect("usage: gen-golden <output-path>");
    let images = golden::golden_corpus();
    let expected = golden::score(&images);
    let file = golden::GoldenFile { images, expected };
    let json = serde_json::to_string_pretty(&file).expect("serialize golden file");
    std::fs::write(&path, json + "\n").expect("write golden file");
    eprintln!("wrote {path}");
}
