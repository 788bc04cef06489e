use rand::Rng;

use crate::data::RankedQuery;
use crate::error::{Error, Result};
use crate::numeric::Matrix;
use crate::rng::SeedPath;

/// Lists of i.i.d. uniform `[0, 1)` documents where exactly the document
/// with the largest feature 0 is relevant.
pub fn make_synthetic_max_task(
    n_queries: usize,
    list_size: usize,
    n_features: usize,
    seed: u64,
) -> Result<Vec<RankedQuery>> {
    if list_size < 2 {
        return Err(Error::Config(format!("list_size must be at least 2, got {list_size}")));
    }
    if n_features == 0 {
        return Err(Error::Config("n_features must be at least 1".into()));
    }
    let root = SeedPath::new(seed).child("synthetic-max");
    Ok((0..n_queries)
        .map(|q| {
            let mut rng = root.index(q as u64).rng();
            let data: Vec<f32> = (0..list_size * n_features).map(|_| rng.gen::<f32>()).collect();
            let features = Matrix::from_vec(list_size, n_features, data).expect("sized");
            let best = (0..list_size)
                .max_by(|&a, &b| features[(a, 0)].total_cmp(&features[(b, 0)]))
                .expect("non-empty list");
            let labels = (0..list_size).map(|i| u32::from(i == best)).collect();
            RankedQuery::new(format!("synthetic-{q}"), labels, features)
        })
        .collect())
}
