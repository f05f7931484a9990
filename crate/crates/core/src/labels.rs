use std::collections::BTreeSet;

/// Sorted set of class names; a class id is an index into it.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClassSet {
    names: Vec<String>,
}

impl ClassSet {
    pub fn from_labels<'a>(labels: impl IntoIterator<Item = &'a str>) -> Self {
        let names: BTreeSet<&str> = labels.into_iter().collect();
        ClassSet {
            names: names.into_iter().map(str::to_owned).collect(),
        }
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.names.binary_search_by(|n| n.as_str().cmp(name)).ok()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// Index of the smallest score; ties go to the lowest index. NaN scores are
/// never selected unless all scores are NaN.
pub fn argmin(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        match best {
            None => best = Some(i),
            Some(b) => {
                if s < scores[b] || (scores[b].is_nan() && !s.is_nan()) {
                    best = Some(i);
                }
            }
        }
    }
    best
}
