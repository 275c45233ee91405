//! Seeded random ontologies and labeled mentions for tests and benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::LabeledMention;
use crate::ontology::{AtcCode, Ontology, OntologyEntry};

/// The fourteen ATC anatomical main groups.
pub const MAIN_GROUPS: [char; 14] = ['A', 'B', 'C', 'D', 'G', 'H', 'J', 'L', 'M', 'N', 'P', 'R', 'S', 'V'];

/// Inclusive child-count range at levels 2 through 5.
#[derive(Debug, Clone, Copy)]
pub struct Shape {
    pub branching: [(usize, usize); 4],
}

impl Default for Shape {
    fn default() -> Self {
        Self {
            branching: [(1, 4), (1, 3), (1, 3), (1, 5)],
        }
    }
}

fn suffix(level: u8, i: usize) -> String {
    match level {
        2 | 5 => format!("{:02}", i + 1),
        _ => char::from(b'A' + i as u8).to_string(),
    }
}

/// Builds a full five-level ontology under the fourteen main groups.
pub fn ontology(seed: u64, shape: Shape) -> Ontology {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    let mut frontier: Vec<String> = Vec::new();
    for g in MAIN_GROUPS {
        let text = g.to_string();
        entries.push(OntologyEntry::new(AtcCode::parse(&text).unwrap(), format!("group {text}")));
        frontier.push(text);
    }
    for (level, &(lo, hi)) in (2u8..=5).zip(shape.branching.iter()) {
        let mut next = Vec::new();
        for parent in &frontier {
            let n = rng.random_range(lo..=hi.min(26));
            for i in 0..n {
                let text = format!("{parent}{}", suffix(level, i));
                let code = AtcCode::parse(&text).expect("generated codes are well formed");
                let name = if level == 5 {
                    format!("substance {}", text.to_lowercase())
                } else {
                    format!("class {text}")
                };
                entries.push(OntologyEntry::new(code, name));
                next.push(text);
            }
        }
        frontier = next;
    }
    Ontology::from_entries(entries).expect("generated ontology is closed under parents")
}

/// One mention per level-5 code, named after the code.
pub fn leaf_mentions(ontology: &Ontology) -> Vec<LabeledMention> {
    ontology
        .entries()
        .iter()
        .filter(|e| e.code.level() == 5)
        .map(|e| {
            LabeledMention::new(format!("brand {}", e.code.as_str().to_lowercase()), e.code.clone())
                .with_generic_name(e.name.clone())
                .with_granularity(5)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ontology::Node;

    #[test]
    fn deterministic_and_closed() {
        let a = ontology(7, Shape::default());
        let b = ontology(7, Shape::default());
        assert_eq!(a, b);
        assert_ne!(a, ontology(8, Shape::default()));
        assert_eq!(a.children(Node::Root).unwrap().len(), 14);
        assert!(a.len() >= 300, "{}", a.len());
        assert!(a.entries().iter().all(|e| e.code.level() == 5 || !a.children(Node::Code(&e.code)).unwrap().is_empty()));
    }

    #[test]
    fn mentions_cover_leaves() {
        let o = ontology(1, Shape::default());
        let m = leaf_mentions(&o);
        assert_eq!(m.len(), o.level_counts()[4]);
        assert!(m.iter().all(|x| o.contains(&x.gold)));
    }
}
