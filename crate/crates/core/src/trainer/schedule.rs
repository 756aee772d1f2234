use serde::{Deserialize, Serialize};

/// `lr_t = lr · max(1 − t/total, floor)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearDecay {
    pub base: f64,
    pub total_steps: u64,
    pub floor: f64,
}

impl LinearDecay {
    pub fn lr_at(&self, step: u64) -> f64 {
        if self.total_steps == 0 {
            return self.base;
        }
        let frac = 1.0 - step as f64 / self.total_steps as f64;
        self.base * frac.max(self.floor).max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decays_linearly_then_floors() {
        let s = LinearDecay {
            base: 0.001,
            total_steps: 100,
            floor: 0.1,
        };
        for t in 0..=90 {
            let expected = 0.001 * (1.0 - t as f64 / 100.0);
            assert!((s.lr_at(t) - expected).abs() < 1e-18, "step {t}");
        }
        for t in 91..300 {
            assert!((s.lr_at(t) - 0.0001).abs() < 1e-18);
        }
        let no_floor = LinearDecay { floor: 0.0, ..s };
        assert_eq!(no_floor.lr_at(100), 0.0);
        assert_eq!(no_floor.lr_at(150), 0.0);
    }
}
