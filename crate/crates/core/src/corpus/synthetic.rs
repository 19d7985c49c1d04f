//! Deterministic templated claim/evidence pairs for toy runs, demos and
//! tests. Not a stand-in for real data: the three classes are separable by
//! construction (paraphrase, contradiction, unrelated evidence).

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ClaimEvidencePair, Label};

const ONSETS: &[&str] = &[
    "al", "bel", "cor", "dun", "el", "fen", "gar", "hol", "is", "kel", "lor", "mar", "nor", "or",
    "pel", "quen", "ros", "sal", "tor", "val", "wen", "yar",
];
const CODAS: &[&str] = &[
    "ford", "mere", "wick", "dale", "ton", "bury", "holm", "stead", "moor", "gate", "field", "haven",
];
const REGIONS: &[&str] = &[
    "the northern highlands", "the river delta", "the eastern plains", "the coastal lowlands",
    "the western hills", "the southern valley", "the lake district", "the central basin",
];
const RIVERS: &[&str] = &["Ash", "Brenn", "Calder", "Dove", "Esk", "Frome", "Glen", "Irwell", "Lune", "Tamar"];
const TRADES: &[&str] = &[
    "wool weaving", "copper mining", "salt production", "shipbuilding", "clockmaking",
    "glassblowing", "cheese making", "paper milling",
];

struct Place {
    name: String,
    region: &'static str,
    river: &'static str,
    founded: u32,
    trade: &'static str,
}

impl Place {
    fn random(rng: &mut ChaCha8Rng) -> Place {
        let mut name = format!(
            "{}{}",
            ONSETS.choose(rng).unwrap(),
            CODAS.choose(rng).unwrap()
        );
        name[..1].make_ascii_uppercase();
        Place {
            name,
            region: REGIONS.choose(rng).unwrap(),
            river: RIVERS.choose(rng).unwrap(),
            founded: rng.gen_range(1100..1900),
            trade: TRADES.choose(rng).unwrap(),
        }
    }

    fn evidence(&self, rng: &mut ChaCha8Rng) -> String {
        let p = self;
        match rng.gen_range(0..3) {
            0 => format!(
                "{} is a market town in {} on the banks of the {} river, founded in {} and long known for {}.",
                p.name, p.region, p.river, p.founded, p.trade
            ),
            1 => format!(
                "Founded in {}, {} grew around {} and lies on the {} river in {}.",
                p.founded, p.name, p.trade, p.river, p.region
            ),
            _ => format!(
                "The town of {} in {} was established in {}; its economy was built on {} along the {} river.",
                p.name, p.region, p.founded, p.trade, p.river
            ),
        }
    }

    fn true_claim(&self, rng: &mut ChaCha8Rng) -> String {
        let p = self;
        match rng.gen_range(0..4) {
            0 => format!("{} was founded in {}.", p.name, p.founded),
            1 => format!("{} lies on the {} river.", p.name, p.river),
            2 => format!("{} is located in {}.", p.name, p.region),
            _ => format!("{} is known for {}.", p.name, p.trade),
        }
    }

    fn false_claim(&self, rng: &mut ChaCha8Rng) -> String {
        let p = self;
        let other_river = loop {
            let r = RIVERS.choose(rng).unwrap();
            if *r != p.river {
                break r;
            }
        };
        let other_trade = loop {
            let t = TRADES.choose(rng).unwrap();
            if *t != p.trade {
                break t;
            }
        };
        match rng.gen_range(0..4) {
            0 => format!("{} was founded in {}.", p.name, p.founded + rng.gen_range(40..300)),
            1 => format!("{} lies on the {} river.", p.name, other_river),
            2 => format!("{} is not located in {}.", p.name, p.region),
            _ => format!("{} has never been known for {}, only for {}.", p.name, p.trade, other_trade),
        }
    }
}

/// `per_class` labeled pairs of every class, shuffled, with ids `syn-00000`…
pub fn generate(per_class: usize, seed: u64) -> Vec<ClaimEvidencePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(per_class * 3);
    for i in 0..per_class * 3 {
        let label = Label::ALL[i % 3];
        let place = Place::random(&mut rng);
        let (claim, evidence) = match label {
            Label::Supports => (place.true_claim(&mut rng), place.evidence(&mut rng)),
            Label::Refutes => (place.false_claim(&mut rng), place.evidence(&mut rng)),
            Label::NotEnoughInfo => {
                let other = Place::random(&mut rng);
                (place.true_claim(&mut rng), other.evidence(&mut rng))
            }
        };
        out.push((label, claim, evidence));
    }
    out.shuffle(&mut rng);
    out.into_iter()
        .enumerate()
        .map(|(i, (label, claim, evidence))| ClaimEvidencePair {
            id: format!("syn-{i:05}"),
            claim,
            evidence,
            label: Some(label),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::label_histogram;

    #[test]
    fn balanced_and_reproducible() {
        let a = generate(20, 9);
        assert_eq!(label_histogram(&a), [20, 20, 20]);
        assert_eq!(a, generate(20, 9));
        assert_ne!(a, generate(20, 10));
        assert!(a.iter().all(|p| p.validate().is_ok()));
    }
}
