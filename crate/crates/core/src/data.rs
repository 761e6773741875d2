//! Interaction-log ingestion and train/validation/test splitting.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::SeedStream;

/// External-id <-> dense-index bijections for users and items.
#[derive(Debug, Default)]
pub struct IdMaps {
    user_ids: Vec<String>,
    item_ids: Vec<String>,
    user_lookup: HashMap<String, usize>,
    item_lookup: HashMap<String, usize>,
}

impl IdMaps {
    pub fn num_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn user_id(&self, dense: usize) -> &str {
        &self.user_ids[dense]
    }

    pub fn item_id(&self, dense: usize) -> &str {
        &self.item_ids[dense]
    }

    pub fn user_index(&self, external: &str) -> Option<usize> {
        self.user_lookup.get(external).copied()
    }

    pub fn item_index(&self, external: &str) -> Option<usize> {
        self.item_lookup.get(external).copied()
    }

    fn intern_user(&mut self, external: &str) -> usize {
        if let Some(&idx) = self.user_lookup.get(external) {
            return idx;
        }
        let idx = self.user_ids.len();
        self.user_ids.push(external.to_owned());
        self.user_lookup.insert(external.to_owned(), idx);
        idx
    }

    fn intern_item(&mut self, external: &str) -> usize {
        if let Some(&idx) = self.item_lookup.get(external) {
            return idx;
        }
        let idx = self.item_ids.len();
        self.item_ids.push(external.to_owned());
        self.item_lookup.insert(external.to_owned(), idx);
        idx
    }
}

/// Sparse binary user-by-item interaction matrix with shared id maps.
///
/// Rows are users in dense order; each row stores the user's item indices
/// sorted ascending. Splits produced from one matrix share its `IdMaps`, so
/// dense indices stay comparable across train/valid/test.
#[derive(Debug, Clone)]
pub struct InteractionMatrix {
    maps: Arc<IdMaps>,
    row_ptr: Vec<usize>,
    items: Vec<usize>,
}

impl InteractionMatrix {
    pub fn from_pairs(maps: Arc<IdMaps>, pairs: &[(usize, usize)]) -> Self {
        let num_users = maps.num_users();
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); num_users];
        for &(u, i) in pairs {
            rows[u].push(i);
        }
        let mut row_ptr = Vec::with_capacity(num_users + 1);
        let mut items = Vec::with_capacity(pairs.len());
        row_ptr.push(0);
        for mut row in rows {
            row.sort_unstable();
            row.dedup();
            items.extend_from_slice(&row);
            row_ptr.push(items.len());
        }
        Self { maps, row_ptr, items }
    }

    /// Builds a matrix over a synthetic id universe `u0..` / `i0..`.
    /// Intended for generated datasets and tests.
    pub fn synthetic(num_users: usize, num_items: usize, pairs: &[(usize, usize)]) -> Self {
        let mut maps = IdMaps::default();
        for u in 0..num_users {
            maps.intern_user(&format!("u{u}"));
        }
        for i in 0..num_items {
            maps.intern_item(&format!("i{i}"));
        }
        Self::from_pairs(Arc::new(maps), pairs)
    }

    pub fn maps(&self) -> &Arc<IdMaps> {
        &self.maps
    }

    pub fn num_users(&self) -> usize {
        self.maps.num_users()
    }

    pub fn num_items(&self) -> usize {
        self.maps.num_items()
    }

    /// Total node count `n = |U| + |I|`.
    pub fn num_nodes(&self) -> usize {
        self.num_users() + self.num_items()
    }

    pub fn nnz(&self) -> usize {
        self.items.len()
    }

    pub fn degree(&self, user: usize) -> usize {
        self.row_ptr[user + 1] - self.row_ptr[user]
    }

    /// Sorted item indices the user interacted with.
    pub fn items_of(&self, user: usize) -> &[usize] {
        &self.items[self.row_ptr[user]..self.row_ptr[user + 1]]
    }

    pub fn contains(&self, user: usize, item: usize) -> bool {
        self.items_of(user).binary_search(&item).is_ok()
    }

    pub fn iter_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_users())
            .flat_map(move |u| self.items_of(u).iter().map(move |&i| (u, i)))
    }

    /// Item degrees (number of interacting users per item).
    pub fn item_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.num_items()];
        for &i in &self.items {
            deg[i] += 1;
        }
        deg
    }

    /// Fraction of absent entries, as a percentage (the usual sparsity
    /// statistic for interaction data).
    pub fn sparsity_pct(&self) -> f64 {
        let total = self.num_users() as f64 * self.num_items() as f64;
        if total == 0.0 {
            return 0.0;
        }
        100.0 * (1.0 - self.nnz() as f64 / total)
    }

    /// Serializes as `user<TAB>item` lines in dense order (external ids).
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (u, i) in self.iter_pairs() {
            let _ = writeln!(out, "{}\t{}", self.maps.user_id(u), self.maps.item_id(i));
        }
        out
    }

    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv())?;
        Ok(())
    }
}

/// Split fractions plus the seed that fixes the per-user shuffles.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub valid_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train_frac: f64, valid_frac: f64, test_frac: f64, seed: u64) -> Result<Self> {
        let spec = Self { train_frac, valid_frac, test_frac, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, f) in [
            ("train_frac", self.train_frac),
            ("valid_frac", self.valid_frac),
            ("test_frac", self.test_frac),
        ] {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::Domain(format!(
                    "{name} must lie in (0,1), got {f}"
                )));
            }
        }
        let sum = self.train_frac + self.valid_frac + self.test_frac;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!(
                "split fractions must sum to 1, got {sum}"
            )));
        }
        Ok(())
    }
}

fn parse_numeric(field: &str) -> bool {
    field.parse::<f64>().is_ok()
}

/// Loads a `user<TAB>item[<TAB>rating][<TAB>timestamp]` file.
///
/// Ratings are ignored (interactions are binarized), duplicates collapse to
/// one entry, and users/items with degree below `min_degree` are dropped
/// iteratively until the filter is stable. Ids are remapped to dense indices
/// in first-seen order of the surviving interactions. A leading header row is
/// skipped when its numeric columns fail to parse.
pub fn load_interactions(path: &Path, min_degree: usize) -> Result<InteractionMatrix> {
    let content = fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    let pairs = parse_pairs(&content, &path.display().to_string())?;
    build_filtered(pairs, min_degree, &path.display().to_string())
}

fn parse_pairs(content: &str, path: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (lineno, line) in content.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 2 || fields.len() > 4 {
            return Err(Error::Parse {
                path: path.to_owned(),
                line: lineno + 1,
                msg: format!("expected 2-4 tab-separated fields, got {}", fields.len()),
            });
        }
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(Error::Parse {
                path: path.to_owned(),
                line: lineno + 1,
                msg: "empty user or item id".into(),
            });
        }
        let numeric_ok = fields[2..].iter().all(|f| parse_numeric(f));
        if !numeric_ok {
            if lineno == 0 {
                // Header row such as "userID\tartistID\tweight".
                continue;
            }
            return Err(Error::Parse {
                path: path.to_owned(),
                line: lineno + 1,
                msg: "rating/timestamp column is not numeric".into(),
            });
        }
        pairs.push((fields[0].to_owned(), fields[1].to_owned()));
    }
    Ok(pairs)
}

fn build_filtered(
    pairs: Vec<(String, String)>,
    min_degree: usize,
    path: &str,
) -> Result<InteractionMatrix> {
    // Dedup first so degrees count distinct interactions.
    let mut seen = HashSet::new();
    let mut unique: Vec<(String, String)> = Vec::with_capacity(pairs.len());
    for p in pairs {
        if seen.insert((p.0.clone(), p.1.clone())) {
            unique.push(p);
        }
    }

    let mut keep: Vec<bool> = vec![true; unique.len()];
    loop {
        let mut udeg: HashMap<&str, usize> = HashMap::new();
        let mut ideg: HashMap<&str, usize> = HashMap::new();
        for (idx, (u, i)) in unique.iter().enumerate() {
            if keep[idx] {
                *udeg.entry(u.as_str()).or_default() += 1;
                *ideg.entry(i.as_str()).or_default() += 1;
            }
        }
        let mut changed = false;
        for (idx, (u, i)) in unique.iter().enumerate() {
            if keep[idx] && (udeg[u.as_str()] < min_degree || ideg[i.as_str()] < min_degree) {
                keep[idx] = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let mut maps = IdMaps::default();
    let mut dense: Vec<(usize, usize)> = Vec::new();
    for (idx, (u, i)) in unique.iter().enumerate() {
        if keep[idx] {
            let du = maps.intern_user(u);
            let di = maps.intern_item(i);
            dense.push((du, di));
        }
    }
    if dense.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "{path}: no interactions left after min_degree={min_degree} filtering"
        )));
    }
    Ok(InteractionMatrix::from_pairs(Arc::new(maps), &dense))
}

/// Per-user random split by the spec's fractions.
///
/// Valid and test sizes are `floor(frac * degree)`; every remainder goes to
/// train. Users with fewer than 3 interactions keep everything in train.
/// The same seed always yields the same split.
pub fn split_per_user(
    r: &InteractionMatrix,
    spec: &SplitSpec,
) -> Result<(InteractionMatrix, InteractionMatrix, InteractionMatrix)> {
    spec.validate()?;
    for u in 0..r.num_users() {
        if r.degree(u) == 0 {
            return Err(Error::Domain(format!(
                "user index {u} has no interactions; cannot split"
            )));
        }
    }
    let streams = SeedStream::new(spec.seed);
    let mut train = Vec::new();
    let mut valid = Vec::new();
    let mut test = Vec::new();
    for u in 0..r.num_users() {
        let mut items: Vec<usize> = r.items_of(u).to_vec();
        if items.len() < 3 {
            train.extend(items.into_iter().map(|i| (u, i)));
            continue;
        }
        let mut rng = streams.child("split", u as u64);
        items.shuffle(&mut rng);
        let n = items.len();
        let n_valid = (spec.valid_frac * n as f64).floor() as usize;
        let n_test = (spec.test_frac * n as f64).floor() as usize;
        let n_train = n - n_valid - n_test;
        for (pos, i) in items.into_iter().enumerate() {
            if pos < n_train {
                train.push((u, i));
            } else if pos < n_train + n_valid {
                valid.push((u, i));
            } else {
                test.push((u, i));
            }
        }
    }
    let maps = Arc::clone(r.maps());
    Ok((
        InteractionMatrix::from_pairs(Arc::clone(&maps), &train),
        InteractionMatrix::from_pairs(Arc::clone(&maps), &valid),
        InteractionMatrix::from_pairs(maps, &test),
    ))
}

/// The three split files written by `prepare` plus their shared id universe.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: InteractionMatrix,
    pub valid: InteractionMatrix,
    pub test: InteractionMatrix,
}

impl Dataset {
    pub fn from_splits(
        train: InteractionMatrix,
        valid: InteractionMatrix,
        test: InteractionMatrix,
    ) -> Self {
        Self { train, valid, test }
    }

    /// Loads `<stem>.train/.valid/.test` from a directory, building one id
    /// universe over all three files so dense indices agree.
    pub fn load_dir(dir: &Path, stem: &str) -> Result<Self> {
        let read = |suffix: &str| -> Result<(PathBuf, String)> {
            let path = dir.join(format!("{stem}.{suffix}"));
            let content = fs::read_to_string(&path).map_err(|e| {
                Error::Io(std::io::Error::new(
                    e.kind(),
                    format!("{}: {e}", path.display()),
                ))
            })?;
            Ok((path, content))
        };
        let (tp, tc) = read("train")?;
        let (vp, vc) = read("valid")?;
        let (sp, sc) = read("test")?;
        let train_pairs = parse_pairs(&tc, &tp.display().to_string())?;
        let valid_pairs = parse_pairs(&vc, &vp.display().to_string())?;
        let test_pairs = parse_pairs(&sc, &sp.display().to_string())?;
        if train_pairs.is_empty() {
            return Err(Error::EmptyDataset(format!("{}", tp.display())));
        }

        let mut maps = IdMaps::default();
        let mut intern =
            |pairs: &[(String, String)], maps: &mut IdMaps| -> Vec<(usize, usize)> {
                pairs
                    .iter()
                    .map(|(u, i)| (maps.intern_user(u), maps.intern_item(i)))
                    .collect()
            };
        let train_dense = intern(&train_pairs, &mut maps);
        let valid_dense = intern(&valid_pairs, &mut maps);
        let test_dense = intern(&test_pairs, &mut maps);
        let maps = Arc::new(maps);
        Ok(Self {
            train: InteractionMatrix::from_pairs(Arc::clone(&maps), &train_dense),
            valid: InteractionMatrix::from_pairs(Arc::clone(&maps), &valid_dense),
            test: InteractionMatrix::from_pairs(maps, &test_dense),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn tiny(content: &str) -> InteractionMatrix {
        let pairs = parse_pairs(content, "mem").unwrap();
        build_filtered(pairs, 1, "mem").unwrap()
    }

    #[test]
    fn load_counts_and_dedup() {
        let m = tiny("a\ti1\na\ti2\nb\ti1\n");
        assert_eq!(m.num_users(), 2);
        assert_eq!(m.num_items(), 2);
        assert_eq!(m.nnz(), 3);

        let m = tiny("a\ti1\na\ti2\nb\ti1\na\ti1\n");
        assert_eq!(m.nnz(), 3);
    }

    #[test]
    fn remap_round_trips() {
        let m = tiny("u9\tx\nu3\ty\nu9\tz\n");
        for u in 0..m.num_users() {
            let ext = m.maps().user_id(u);
            assert_eq!(m.maps().user_index(ext), Some(u));
        }
        for i in 0..m.num_items() {
            let ext = m.maps().item_id(i);
            assert_eq!(m.maps().item_index(ext), Some(i));
        }
        // First-seen order.
        assert_eq!(m.maps().user_id(0), "u9");
        assert_eq!(m.maps().user_id(1), "u3");
    }

    #[test]
    fn min_degree_filters_iteratively() {
        // c-i3 survives only through i3; dropping i3 (degree 1 via c) must
        // cascade: after removing low-degree items, user c loses its last
        // interaction and disappears too.
        let content = "a\ti1\na\ti2\nb\ti1\nb\ti2\nc\ti3\n";
        let pairs = parse_pairs(content, "mem").unwrap();
        let m = build_filtered(pairs, 2, "mem").unwrap();
        assert_eq!(m.num_users(), 2);
        assert_eq!(m.num_items(), 2);
        assert_eq!(m.nnz(), 4);
    }

    #[test]
    fn malformed_line_reports_number() {
        let err = parse_pairs("a\ti1\nbroken\n", "mem").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn header_row_is_skipped() {
        let m = tiny("userID\tartistID\tweight\n2\t51\t13883\n2\t52\t11690\n");
        assert_eq!(m.num_users(), 1);
        assert_eq!(m.num_items(), 2);
    }

    #[test]
    fn split_exact_fractions() {
        let mut maps = IdMaps::default();
        let u = maps.intern_user("u");
        let mut pairs = Vec::new();
        for i in 0..10 {
            let it = maps.intern_item(&format!("i{i}"));
            pairs.push((u, it));
        }
        let m = InteractionMatrix::from_pairs(Arc::new(maps), &pairs);
        let spec = SplitSpec::new(0.8, 0.1, 0.1, 7).unwrap();
        let (tr, va, te) = split_per_user(&m, &spec).unwrap();
        assert_eq!(tr.nnz(), 8);
        assert_eq!(va.nnz(), 1);
        assert_eq!(te.nnz(), 1);
    }

    #[test]
    fn split_degenerate_user_all_train() {
        let mut maps = IdMaps::default();
        let u = maps.intern_user("u");
        let i = maps.intern_item("i");
        let m = InteractionMatrix::from_pairs(Arc::new(maps), &[(u, i)]);
        let spec = SplitSpec::new(0.8, 0.1, 0.1, 7).unwrap();
        let (tr, va, te) = split_per_user(&m, &spec).unwrap();
        assert_eq!((tr.nnz(), va.nnz(), te.nnz()), (1, 0, 0));
    }

    #[test]
    fn split_union_is_identity() {
        // Set-equality oracle: union of the three parts reproduces R and the
        // parts are pairwise disjoint.
        let mut content = String::new();
        let mut rng_state = 12345u64;
        for u in 0..40 {
            for i in 0..30 {
                rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1);
                if rng_state >> 33 & 0x3 == 0 {
                    content.push_str(&format!("u{u}\ti{i}\n"));
                }
            }
        }
        let m = tiny(&content);
        let spec = SplitSpec::new(0.8, 0.1, 0.1, 99).unwrap();
        let (tr, va, te) = split_per_user(&m, &spec).unwrap();

        let all: BTreeSet<(usize, usize)> = m.iter_pairs().collect();
        let mut union = BTreeSet::new();
        let mut total = 0usize;
        for part in [&tr, &va, &te] {
            for p in part.iter_pairs() {
                union.insert(p);
                total += 1;
            }
        }
        assert_eq!(union, all);
        assert_eq!(total, all.len(), "parts overlap");
    }

    #[test]
    fn split_deterministic_bytes() {
        let m = tiny("a\ti1\na\ti2\na\ti3\na\ti4\nb\ti1\nb\ti2\nb\ti3\n");
        let spec = SplitSpec::new(0.6, 0.2, 0.2, 5).unwrap();
        let (t1, v1, s1) = split_per_user(&m, &spec).unwrap();
        let (t2, v2, s2) = split_per_user(&m, &spec).unwrap();
        assert_eq!(t1.to_tsv(), t2.to_tsv());
        assert_eq!(v1.to_tsv(), v2.to_tsv());
        assert_eq!(s1.to_tsv(), s2.to_tsv());
    }

    #[test]
    fn bad_fractions_rejected() {
        assert!(SplitSpec::new(0.8, 0.1, 0.2, 0).is_err());
        assert!(SplitSpec::new(1.0, 0.0, 0.0, 0).is_err());
    }
}
