//! Words in free products of small factor groups, with exact norms.
//!
//! A factor is one of: the integers acting by translation, a finite cyclic
//! group whose nontrivial elements share one displacement, an explicit
//! finite group table with a symmetric norm, or a counting group (a direct
//! sum of cyclic groups with an ultrametric norm given by thresholds).
//! Words are kept in reduced normal form: adjacent letters always come
//! from different factors and no letter is an identity element.
//!
//! The word norm is the sum of the letter norms. For tree actions built in
//! the rtree module this equals the orbit distance d(o, w.o) exactly, which
//! the tree tests assert.

mod classify;
mod edelstein;

pub use classify::{classify_lorentz, classify_word, coding_limit_point, CodedLimit, IsometryClass, WordClass};
pub use edelstein::{dist_to_int_sq_sum, dyadic_comparison_sum, factorial_displacement_sq, hyperbolic_displacement_from_sq, EdelsteinSpec};

use crate::rtree::CountingSpec;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub enum ActionError {
    /// A letter references a missing factor or an invalid element.
    BadLetter { reason: String },
    /// A factor fails its own validation.
    BadFactor { index: usize, reason: String },
    /// A factor with no nontrivial elements under the given cutoff.
    EmptyFactor { index: usize },
    /// Enumeration hit the configured word-count cap.
    BudgetExceeded { budget: usize },
    /// Classification ran out of budget or the evidence is ambiguous.
    Inconclusive { reason: String },
    /// The requested tail tolerance cannot be certified.
    TailTooLarge { bound: f64 },
    /// The action does not separate cylinders as required.
    NotSeparated { reason: String },
}

impl std::fmt::Display for ActionError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ActionError::BadLetter { reason } => write!(f, "bad letter: {reason}"),
            ActionError::BadFactor { index, reason } => {
                write!(f, "bad factor {index}: {reason}")
            }
            ActionError::EmptyFactor { index } => {
                write!(f, "factor {index} has no usable elements")
            }
            ActionError::BudgetExceeded { budget } => {
                write!(f, "budget exceeded: more than {budget} words")
            }
            ActionError::Inconclusive { reason } => write!(f, "inconclusive: {reason}"),
            ActionError::TailTooLarge { bound } => {
                write!(f, "tail bound {bound} exceeds the requested tolerance")
            }
            ActionError::NotSeparated { reason } => write!(f, "not separated: {reason}"),
        }
    }
}

impl std::error::Error for ActionError {}

/// A nontrivial element of one factor.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FactorElem {
    /// Nonzero power of the generator of an infinite cyclic factor.
    Power(i64),
    /// Index 1..n of a finite cyclic or table factor element.
    Index(usize),
    /// Coordinates in a counting group; the last entry is nonzero.
    Coords(Vec<u32>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum FactorGroup {
    /// Integers, generator translating by r > 0.
    Cyclic { r: f64 },
    /// Z/n with every nontrivial element displacing by lambda.
    FiniteCyclic { n: u32, lambda: f64 },
    /// Explicit multiplication table; index 0 is the identity.
    Table { norms: Vec<f64>, table: Vec<Vec<usize>> },
    /// Direct sum of Z/N_k with ultrametric threshold norms.
    Counting(CountingSpec),
}

impl FactorGroup {
    pub fn validate(&self) -> Result<(), String> {
        match self {
            FactorGroup::Cyclic { r } => {
                if !(r.is_finite() && *r > 0.0) {
                    return Err(format!("translation length {r} must be positive"));
                }
            }
            FactorGroup::FiniteCyclic { n, lambda } => {
                if *n < 2 {
                    return Err(format!("order {n} must be at least 2"));
                }
                if !(lambda.is_finite() && *lambda > 0.0) {
                    return Err(format!("displacement {lambda} must be positive"));
                }
            }
            FactorGroup::Table { norms, table } => {
                let n = norms.len();
                if n < 2 {
                    return Err("table needs at least two elements".into());
                }
                if table.len() != n || table.iter().any(|row| row.len() != n) {
                    return Err("table is not square".into());
                }
                if norms[0] != 0.0 {
                    return Err("identity must have norm 0".into());
                }
                for (i, &v) in norms.iter().enumerate().skip(1) {
                    if !(v.is_finite() && v > 0.0) {
                        return Err(format!("norm of element {i} must be positive"));
                    }
                }
                for i in 0..n {
                    if table[0][i] != i || table[i][0] != i {
                        return Err("index 0 is not an identity".into());
                    }
                }
                for i in 0..n {
                    let mut seen_row = vec![false; n];
                    let mut seen_col = vec![false; n];
                    let mut has_inv = false;
                    for j in 0..n {
                        let (r, c) = (table[i][j], table[j][i]);
                        if r >= n || c >= n {
                            return Err("table entry out of range".into());
                        }
                        if seen_row[r] || seen_col[c] {
                            return Err(format!("row or column {i} repeats an element"));
                        }
                        seen_row[r] = true;
                        seen_col[c] = true;
                        if r == 0 {
                            has_inv = true;
                            if (norms[i] - norms[j]).abs() > 1e-12 {
                                return Err(format!(
                                    "norm of element {i} differs from its inverse"
                                ));
                            }
                        }
                    }
                    if !has_inv {
                        return Err(format!("element {i} has no inverse"));
                    }
                }
                for a in 0..n {
                    for b in 0..n {
                        for c in 0..n {
                            if table[table[a][b]][c] != table[a][table[b][c]] {
                                return Err(format!("associativity fails at ({a},{b},{c})"));
                            }
                        }
                    }
                }
            }
            FactorGroup::Counting(spec) => spec.validate().map_err(|e| e.to_string())?,
        }
        Ok(())
    }

    pub fn is_valid_elem(&self, e: &FactorElem) -> bool {
        match (self, e) {
            (FactorGroup::Cyclic { .. }, FactorElem::Power(k)) => *k != 0,
            (FactorGroup::FiniteCyclic { n, .. }, FactorElem::Index(i)) => {
                *i >= 1 && *i < *n as usize
            }
            (FactorGroup::Table { norms, .. }, FactorElem::Index(i)) => {
                *i >= 1 && *i < norms.len()
            }
            (FactorGroup::Counting(spec), FactorElem::Coords(c)) => spec.is_valid_coords(c),
            _ => false,
        }
    }

    /// Product; None means the result is the identity.
    pub fn mul(&self, a: &FactorElem, b: &FactorElem) -> Option<FactorElem> {
        match (self, a, b) {
            (FactorGroup::Cyclic { .. }, FactorElem::Power(x), FactorElem::Power(y)) => {
                let s = x + y;
                (s != 0).then_some(FactorElem::Power(s))
            }
            (FactorGroup::FiniteCyclic { n, .. }, FactorElem::Index(x), FactorElem::Index(y)) => {
                let s = (x + y) % *n as usize;
                (s != 0).then_some(FactorElem::Index(s))
            }
            (FactorGroup::Table { table, .. }, FactorElem::Index(x), FactorElem::Index(y)) => {
                let s = table[*x][*y];
                (s != 0).then_some(FactorElem::Index(s))
            }
            (FactorGroup::Counting(spec), FactorElem::Coords(x), FactorElem::Coords(y)) => {
                let s = spec.mul_coords(x, y);
                (!s.is_empty()).then_some(FactorElem::Coords(s))
            }
            _ => panic!("element does not belong to this factor"),
        }
    }

    pub fn inv(&self, e: &FactorElem) -> FactorElem {
        match (self, e) {
            (FactorGroup::Cyclic { .. }, FactorElem::Power(k)) => FactorElem::Power(-k),
            (FactorGroup::FiniteCyclic { n, .. }, FactorElem::Index(i)) => {
                FactorElem::Index(*n as usize - i)
            }
            (FactorGroup::Table { table, .. }, FactorElem::Index(i)) => {
                let j = (0..table.len())
                    .find(|&j| table[*i][j] == 0)
                    .expect("validated table has inverses");
                FactorElem::Index(j)
            }
            (FactorGroup::Counting(spec), FactorElem::Coords(c)) => {
                FactorElem::Coords(spec.inv_coords(c))
            }
            _ => panic!("element does not belong to this factor"),
        }
    }

    pub fn norm(&self, e: &FactorElem) -> f64 {
        match (self, e) {
            (FactorGroup::Cyclic { r }, FactorElem::Power(k)) => k.unsigned_abs() as f64 * r,
            (FactorGroup::FiniteCyclic { lambda, .. }, FactorElem::Index(_)) => *lambda,
            (FactorGroup::Table { norms, .. }, FactorElem::Index(i)) => norms[*i],
            (FactorGroup::Counting(spec), FactorElem::Coords(c)) => spec.norm_coords(c),
            _ => panic!("element does not belong to this factor"),
        }
    }

    /// Whether the element has finite order in the factor.
    pub fn is_torsion(&self, e: &FactorElem) -> bool {
        match self {
            FactorGroup::Cyclic { .. } => false,
            _ => {
                let _ = e;
                true
            }
        }
    }

    /// Nontrivial elements of norm at most `max_norm`, in the deterministic
    /// order used everywhere: generator powers 1, -1, 2, -2, ... for the
    /// integers; ascending indices for finite factors; (level, coordinates)
    /// for counting groups. Truncated at `cap` entries.
    pub fn elems_up_to(&self, max_norm: f64, cap: usize) -> Vec<FactorElem> {
        let mut out = Vec::new();
        let slack = 1e-12 * (1.0 + max_norm.abs());
        match self {
            FactorGroup::Cyclic { r } => {
                let mut k: i64 = 1;
                while k as f64 * r <= max_norm + slack && out.len() < cap {
                    out.push(FactorElem::Power(k));
                    if out.len() < cap {
                        out.push(FactorElem::Power(-k));
                    }
                    k += 1;
                }
            }
            FactorGroup::FiniteCyclic { n, lambda } => {
                if *lambda <= max_norm + slack {
                    for i in 1..*n as usize {
                        if out.len() >= cap {
                            break;
                        }
                        out.push(FactorElem::Index(i));
                    }
                }
            }
            FactorGroup::Table { norms, .. } => {
                for (i, &v) in norms.iter().enumerate().skip(1) {
                    if v <= max_norm + slack && out.len() < cap {
                        out.push(FactorElem::Index(i));
                    }
                }
            }
            FactorGroup::Counting(spec) => {
                for c in spec.enumerate_up_to(max_norm + slack, cap) {
                    out.push(FactorElem::Coords(c));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Letter {
    pub factor: usize,
    pub elem: FactorElem,
}

/// A reduced word; construct through `SchottkyAction::reduce`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Word {
    letters: Vec<Letter>,
}

impl Word {
    pub fn identity() -> Self {
        Word::default()
    }

    pub fn letters(&self) -> &[Letter] {
        &self.letters
    }

    pub fn len(&self) -> usize {
        self.letters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.letters.is_empty()
    }
}

impl std::fmt::Display for Word {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.letters.is_empty() {
            return write!(f, "e");
        }
        for (i, l) in self.letters.iter().enumerate() {
            if i > 0 {
                write!(f, ".")?;
            }
            match &l.elem {
                FactorElem::Power(k) => write!(f, "g{}^{}", l.factor, k)?,
                FactorElem::Index(j) => write!(f, "g{}[{}]", l.factor, j)?,
                FactorElem::Coords(c) => {
                    write!(f, "g{}(", l.factor)?;
                    for (j, x) in c.iter().enumerate() {
                        if j > 0 {
                            write!(f, ",")?;
                        }
                        write!(f, "{x}")?;
                    }
                    write!(f, ")")?;
                }
            }
        }
        Ok(())
    }
}

/// Enumeration cutoff: by word length (with a norm cap on letters of
/// infinite factors) or by total word norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Cutoff {
    Length { max_len: usize, max_letter_norm: f64 },
    Norm { max_norm: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchottkyAction {
    pub factors: Vec<FactorGroup>,
}

impl SchottkyAction {
    pub fn new(factors: Vec<FactorGroup>) -> Result<Self, ActionError> {
        if factors.is_empty() {
            return Err(ActionError::BadFactor {
                index: 0,
                reason: "no factors".into(),
            });
        }
        for (i, g) in factors.iter().enumerate() {
            g.validate()
                .map_err(|reason| ActionError::BadFactor { index: i, reason })?;
        }
        Ok(SchottkyAction { factors })
    }

    pub fn check_letter(&self, l: &Letter) -> Result<(), ActionError> {
        let g = self.factors.get(l.factor).ok_or_else(|| ActionError::BadLetter {
            reason: format!("factor {} out of range", l.factor),
        })?;
        if !g.is_valid_elem(&l.elem) {
            return Err(ActionError::BadLetter {
                reason: format!("element {:?} invalid in factor {}", l.elem, l.factor),
            });
        }
        Ok(())
    }

    /// Reduces a letter sequence to normal form by merging adjacent letters
    /// of the same factor and dropping identities.
    pub fn reduce(&self, letters: &[Letter]) -> Result<Word, ActionError> {
        let mut stack: Vec<Letter> = Vec::with_capacity(letters.len());
        for l in letters {
            self.check_letter(l)?;
            match stack.last() {
                Some(top) if top.factor == l.factor => {
                    // Merging cannot expose a new same-factor adjacency:
                    // either the product survives (same factor as before) or
                    // it vanishes and the neighbors already had distinct
                    // factors, so one pass keeps the stack reduced.
                    let g = &self.factors[l.factor];
                    let top = stack.pop().unwrap();
                    if let Some(elem) = g.mul(&top.elem, &l.elem) {
                        stack.push(Letter {
                            factor: l.factor,
                            elem,
                        });
                    }
                }
                _ => stack.push(l.clone()),
            }
        }
        Ok(Word { letters: stack })
    }

    pub fn mul(&self, a: &Word, b: &Word) -> Word {
        let mut letters = a.letters.clone();
        letters.extend_from_slice(&b.letters);
        self.reduce(&letters).expect("reduced inputs stay valid")
    }

    pub fn inv(&self, w: &Word) -> Word {
        let letters: Vec<Letter> = w
            .letters
            .iter()
            .rev()
            .map(|l| Letter {
                factor: l.factor,
                elem: self.factors[l.factor].inv(&l.elem),
            })
            .collect();
        Word { letters }
    }

    /// Word norm: the sum of letter norms.
    pub fn norm(&self, w: &Word) -> f64 {
        w.letters
            .iter()
            .map(|l| self.factors[l.factor].norm(&l.elem))
            .sum()
    }

    /// Gromov product of two orbit points at the identity:
    /// (g|h)_e = (|g| + |h| - |g^{-1}h|) / 2 in the word norm.
    pub fn gromov(&self, g: &Word, h: &Word) -> f64 {
        let cross = self.mul(&self.inv(g), h);
        0.5 * (self.norm(g) + self.norm(h) - self.norm(&cross))
    }

    /// Whether g is a prefix of h in the orbit-tree sense: g.o lies on the
    /// geodesic from o to h.o.
    pub fn is_prefix(&self, g: &Word, h: &Word) -> bool {
        let cross = self.mul(&self.inv(g), h);
        let slack = self.norm(g) + self.norm(&cross) - self.norm(h);
        slack.abs() <= 1e-12 * (1.0 + self.norm(h))
    }

    /// Cylinder relation for two prefixes: nested one way, the other, or
    /// disjoint (incomparable prefixes address disjoint limit sets).
    pub fn cylinder_relation(&self, g: &Word, h: &Word) -> CylinderRelation {
        let gh = self.is_prefix(g, h);
        let hg = self.is_prefix(h, g);
        match (gh, hg) {
            (true, true) => CylinderRelation::Equal,
            (true, false) => CylinderRelation::Contains,
            (false, true) => CylinderRelation::Inside,
            (false, false) => CylinderRelation::Disjoint,
        }
    }

    /// All reduced words under the cutoff, paired with their norms, in the
    /// deterministic order (length, factor index, element index).
    pub fn orbit_enumerate(
        &self,
        cutoff: Cutoff,
        budget: usize,
    ) -> Result<Vec<(Word, f64)>, ActionError> {
        for (i, g) in self.factors.iter().enumerate() {
            let probe = match cutoff {
                Cutoff::Length {
                    max_letter_norm, ..
                } => max_letter_norm,
                Cutoff::Norm { max_norm } => max_norm,
            };
            if g.elems_up_to(probe, 1).is_empty() {
                return Err(ActionError::EmptyFactor { index: i });
            }
        }
        let mut out: Vec<(Word, f64)> = vec![(Word::identity(), 0.0)];
        let mut frontier: Vec<(Word, f64)> = vec![(Word::identity(), 0.0)];
        loop {
            match cutoff {
                Cutoff::Length { max_len, .. } => {
                    if frontier.first().map_or(true, |(w, _)| w.len() >= max_len) {
                        break;
                    }
                }
                Cutoff::Norm { .. } => {
                    if frontier.is_empty() {
                        break;
                    }
                }
            }
            let mut next: Vec<(Word, f64)> = Vec::new();
            for (w, n) in &frontier {
                let last_factor = w.letters.last().map(|l| l.factor);
                for (fi, g) in self.factors.iter().enumerate() {
                    if Some(fi) == last_factor {
                        continue;
                    }
                    let room = match cutoff {
                        Cutoff::Length {
                            max_letter_norm, ..
                        } => max_letter_norm,
                        Cutoff::Norm { max_norm } => max_norm - n,
                    };
                    for elem in g.elems_up_to(room, budget + 1) {
                        let ln = g.norm(&elem);
                        let mut letters = w.letters.clone();
                        letters.push(Letter { factor: fi, elem });
                        let word = Word { letters };
                        let norm = n + ln;
                        if out.len() + next.len() >= budget {
                            return Err(ActionError::BudgetExceeded { budget });
                        }
                        next.push((word, norm));
                    }
                }
            }
            out.extend(next.iter().cloned());
            frontier = next;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CylinderRelation {
    Equal,
    Contains,
    Inside,
    Disjoint,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f2() -> SchottkyAction {
        SchottkyAction::new(vec![
            FactorGroup::Cyclic { r: 1.0 },
            FactorGroup::Cyclic { r: 1.0 },
        ])
        .unwrap()
    }

    fn letter_p(factor: usize, k: i64) -> Letter {
        Letter {
            factor,
            elem: FactorElem::Power(k),
        }
    }

    #[test]
    fn reduction_cancels_and_merges() {
        let a = f2();
        let w = a
            .reduce(&[letter_p(0, 1), letter_p(0, -1)])
            .unwrap();
        assert!(w.is_empty());
        let w = a.reduce(&[letter_p(0, 1), letter_p(0, 2)]).unwrap();
        assert_eq!(w.letters(), &[letter_p(0, 3)]);
        // Five letters collapsing to one: b a a^-1 b^-1 a.
        let w = a
            .reduce(&[
                letter_p(1, 1),
                letter_p(0, 1),
                letter_p(0, -1),
                letter_p(1, -1),
                letter_p(0, 1),
            ])
            .unwrap();
        assert_eq!(w.letters(), &[letter_p(0, 1)]);
    }

    /// Brute-force oracle: cancel or merge one adjacent pair at a time
    /// until nothing applies.
    fn reduce_oracle(action: &SchottkyAction, letters: &[Letter]) -> Vec<Letter> {
        let mut cur = letters.to_vec();
        loop {
            let mut changed = false;
            for i in 0..cur.len().saturating_sub(1) {
                if cur[i].factor == cur[i + 1].factor {
                    let g = &action.factors[cur[i].factor];
                    let merged = g.mul(&cur[i].elem, &cur[i + 1].elem);
                    match merged {
                        Some(elem) => {
                            cur[i] = Letter {
                                factor: cur[i].factor,
                                elem,
                            };
                            cur.remove(i + 1);
                        }
                        None => {
                            cur.remove(i + 1);
                            cur.remove(i);
                        }
                    }
                    changed = true;
                    break;
                }
            }
            if !changed {
                return cur;
            }
        }
    }

    #[test]
    fn reduction_matches_the_stepwise_oracle() {
        use rand::{Rng, SeedableRng};
        let action = SchottkyAction::new(vec![
            FactorGroup::Cyclic { r: 1.0 },
            FactorGroup::FiniteCyclic { n: 3, lambda: 2.0 },
            FactorGroup::FiniteCyclic { n: 2, lambda: 1.0 },
        ])
        .unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..2000 {
            let len = rng.gen_range(0..12);
            let letters: Vec<Letter> = (0..len)
                .map(|_| {
                    let factor = rng.gen_range(0..3);
                    let elem = match factor {
                        0 => FactorElem::Power(*[-2i64, -1, 1, 2].get(rng.gen_range(0..4)).unwrap()),
                        1 => FactorElem::Index(rng.gen_range(1..3)),
                        _ => FactorElem::Index(1),
                    };
                    Letter { factor, elem }
                })
                .collect();
            let fast = action.reduce(&letters).unwrap();
            let slow = reduce_oracle(&action, &letters);
            assert_eq!(fast.letters(), &slow[..]);
            // Idempotence.
            let again = action.reduce(fast.letters()).unwrap();
            assert_eq!(again, fast);
        }
    }

    #[test]
    fn enumeration_counts_free_and_dihedral() {
        let words = f2()
            .orbit_enumerate(
                Cutoff::Length {
                    max_len: 2,
                    max_letter_norm: 1.0,
                },
                100_000,
            )
            .unwrap();
        // Identity, then 4 letters, then 4 * 2 alternating two-letter words.
        assert_eq!(words.len(), 13);
        let dihedral = SchottkyAction::new(vec![
            FactorGroup::FiniteCyclic { n: 2, lambda: 1.0 },
            FactorGroup::FiniteCyclic { n: 2, lambda: 1.0 },
        ])
        .unwrap();
        let words = dihedral
            .orbit_enumerate(
                Cutoff::Length {
                    max_len: 3,
                    max_letter_norm: 1.0,
                },
                100_000,
            )
            .unwrap();
        assert_eq!(words.len(), 7);
        let only_id = f2()
            .orbit_enumerate(
                Cutoff::Length {
                    max_len: 0,
                    max_letter_norm: 1.0,
                },
                100,
            )
            .unwrap();
        assert_eq!(only_id.len(), 1);
    }

    #[test]
    fn norm_cutoff_agrees_with_filtered_length_cutoff() {
        let action = f2();
        let by_norm = action
            .orbit_enumerate(Cutoff::Norm { max_norm: 3.0 }, 100_000)
            .unwrap();
        let by_len = action
            .orbit_enumerate(
                Cutoff::Length {
                    max_len: 3,
                    max_letter_norm: 3.0,
                },
                1_000_000,
            )
            .unwrap();
        let filtered: Vec<&Word> = by_len
            .iter()
            .filter(|(_, n)| *n <= 3.0)
            .map(|(w, _)| w)
            .collect();
        assert_eq!(by_norm.len(), filtered.len());
        let set: std::collections::HashSet<&Word> = by_norm.iter().map(|(w, _)| w).collect();
        for w in filtered {
            assert!(set.contains(w));
        }
    }

    #[test]
    fn budget_is_enforced() {
        let err = f2()
            .orbit_enumerate(
                Cutoff::Length {
                    max_len: 10,
                    max_letter_norm: 1.0,
                },
                50,
            )
            .unwrap_err();
        assert!(matches!(err, ActionError::BudgetExceeded { budget: 50 }));
    }

    #[test]
    fn cylinder_relations_on_the_free_group() {
        let action = f2();
        let a = action.reduce(&[letter_p(0, 1)]).unwrap();
        let a2 = action.reduce(&[letter_p(0, 2)]).unwrap();
        let b = action.reduce(&[letter_p(1, 1)]).unwrap();
        let ab = action.reduce(&[letter_p(0, 1), letter_p(1, 1)]).unwrap();
        let a_inv = action.reduce(&[letter_p(0, -1)]).unwrap();
        assert_eq!(action.cylinder_relation(&a, &ab), CylinderRelation::Contains);
        assert_eq!(action.cylinder_relation(&ab, &a), CylinderRelation::Inside);
        assert_eq!(action.cylinder_relation(&a, &a2), CylinderRelation::Contains);
        assert_eq!(action.cylinder_relation(&a, &b), CylinderRelation::Disjoint);
        assert_eq!(action.cylinder_relation(&a, &a_inv), CylinderRelation::Disjoint);
        assert_eq!(action.cylinder_relation(&a, &a), CylinderRelation::Equal);
    }

    #[test]
    fn group_laws_and_gromov_products() {
        let action = f2();
        let ab = action.reduce(&[letter_p(0, 1), letter_p(1, 1)]).unwrap();
        let inv = action.inv(&ab);
        assert!(action.mul(&ab, &inv).is_empty());
        assert_eq!(action.norm(&ab), 2.0);
        // Common prefix a: (ab | a^2)_e = 1.
        let a2 = action.reduce(&[letter_p(0, 2)]).unwrap();
        assert_eq!(action.gromov(&ab, &a2), 1.0);
    }

    #[test]
    fn table_factor_validation() {
        // Z/3 written as an explicit table.
        let good = FactorGroup::Table {
            norms: vec![0.0, 1.0, 1.0],
            table: vec![vec![0, 1, 2], vec![1, 2, 0], vec![2, 0, 1]],
        };
        assert!(good.validate().is_ok());
        let bad = FactorGroup::Table {
            norms: vec![0.0, 1.0, 1.0],
            table: vec![vec![0, 1, 2], vec![1, 1, 0], vec![2, 0, 1]],
        };
        assert!(bad.validate().is_err());
    }
}
