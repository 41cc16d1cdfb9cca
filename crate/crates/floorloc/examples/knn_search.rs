//! Exercises the map database on its own: exact versus approximate cosine
//! k-NN over synthetic entries.
//!
//! Run with: `cargo run --example knn_search`

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use floorloc::descriptor::{Descriptor, DESCRIPTOR_DIM};
use floorloc::mapdb::{build_index, MapEntry, QueryMode};

fn random_unit(rng: &mut ChaCha8Rng) -> Descriptor {
    loop {
        let mut raw = [0.0f64; DESCRIPTOR_DIM];
        for slot in raw.iter_mut() {
            *slot = rng.random::<f64>() - 0.5;
        }
        if let Ok(d) = Descriptor::from_components(&raw) {
            return d;
        }
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let entries: Vec<MapEntry> = (0..10_000)
        .map(|i| MapEntry {
            entry_id: i,
            world_pos: (rng.random::<f64>(), rng.random::<f64>()),
            descriptor: random_unit(&mut rng),
            member_count: 4,
        })
        .collect();

    let db = build_index(entries)?;
    println!(
        "indexed {} entries; build self-test recall@20 = {:.3}",
        db.len(),
        db.self_test_recall
    );

    // Recall of the approximate path against exact search.
    let mut hit = 0usize;
    let mut total = 0usize;
    let started = std::time::Instant::now();
    for _ in 0..100 {
        let q = random_unit(&mut rng);
        let exact: Vec<u64> = db
            .query_knn(&q, 20, QueryMode::Exact)
            .into_iter()
            .map(|m| m.entry_id)
            .collect();
        let approx: std::collections::HashSet<u64> = db
            .query_knn(&q, 20, QueryMode::Approx)
            .into_iter()
            .map(|m| m.entry_id)
            .collect();
        hit += exact.iter().filter(|id| approx.contains(id)).count();
        total += exact.len();
    }
    println!(
        "query recall@20 over 100 random queries: {:.3} ({:.2} ms per query pair)",
        hit as f64 / total as f64,
        started.elapsed().as_secs_f64() * 10.0,
    );

    let q = db.entries()[4321].descriptor;
    let top = db.query_knn(&q, 3, QueryMode::Exact);
    println!("self-query: top-3 = {:?}", top.iter().map(|m| m.entry_id).collect::<Vec<_>>());
    Ok(())
}
