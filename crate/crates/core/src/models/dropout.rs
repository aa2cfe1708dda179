use ndarray::Array1;
use rand::{Rng, RngCore};

/// Inverted dropout on pooled feature vectors; `Off` in evaluation.
pub enum Dropout<'a> {
    Off,
    On { rate: f64, rng: &'a mut dyn RngCore },
}

impl Dropout<'_> {
    /// Returns the transformed vector and the scaled keep mask, if any.
    pub fn apply(&mut self, x: Array1<f64>) -> (Array1<f64>, Option<Array1<f64>>) {
        match self {
            Dropout::On { rate, rng } if *rate > 0.0 => {
                let keep = 1.0 - *rate;
                let mask = Array1::from_shape_fn(x.len(), |_| {
                    if rng.random::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                });
                (&x * &mask, Some(mask))
            }
            _ => (x, None),
        }
    }
}
