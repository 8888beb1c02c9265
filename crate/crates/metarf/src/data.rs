//! Descriptor tables, reaction encoding, group splits, and task sampling.
//!
//! A [`DescriptorTable`] holds one encoded reaction per row: a fixed-length
//! feature vector, a group key (the reagent that defines out-of-distribution
//! splits, e.g. an additive), and a yield in percent. Tables are validated on
//! construction and immutable afterwards, so they can be shared freely across
//! threads.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng::{shuffle, SplitMix64};

/// Validated table of encoded reactions.
#[derive(Debug, Clone)]
pub struct DescriptorTable {
    row_ids: Vec<String>,
    groups: Vec<String>,
    features: Array2<f64>,
    yields: Vec<f64>,
    feature_names: Vec<String>,
}

impl DescriptorTable {
    /// Build a table, enforcing the row invariants: consistent feature
    /// length `p >= 1`, finite features, finite yields in `[0, 100]`, and
    /// non-empty group keys.
    pub fn new(
        row_ids: Vec<String>,
        groups: Vec<String>,
        features: Array2<f64>,
        yields: Vec<f64>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        let n = row_ids.len();
        if n == 0 {
            return Err(Error::invalid("table has no rows"));
        }
        if groups.len() != n || yields.len() != n || features.nrows() != n {
            return Err(Error::invalid(format!(
                "inconsistent row counts: {} ids, {} groups, {} yields, {} feature rows",
                n,
                groups.len(),
                yields.len(),
                features.nrows()
            )));
        }
        let p = features.ncols();
        if p == 0 {
            return Err(Error::invalid("table has no feature columns"));
        }
        if feature_names.len() != p {
            return Err(Error::invalid(format!(
                "{} feature names for {} feature columns",
                feature_names.len(),
                p
            )));
        }
        for (i, group) in groups.iter().enumerate() {
            if group.is_empty() {
                return Err(Error::invalid(format!("row {}: empty group key", i + 1)));
            }
        }
        for (i, &y) in yields.iter().enumerate() {
            if !y.is_finite() {
                return Err(Error::invalid(format!("row {}: non-finite yield", i + 1)));
            }
            if !(0.0..=100.0).contains(&y) {
                return Err(Error::invalid(format!(
                    "row {}: yield {} outside [0, 100]",
                    i + 1,
                    y
                )));
            }
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite feature value"));
        }
        Ok(DescriptorTable {
            row_ids,
            groups,
            features,
            yields,
            feature_names,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.row_ids.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn row_id(&self, row: usize) -> &str {
        &self.row_ids[row]
    }

    pub fn group(&self, row: usize) -> &str {
        &self.groups[row]
    }

    pub fn yield_value(&self, row: usize) -> f64 {
        self.yields[row]
    }

    pub fn yields(&self) -> &[f64] {
        &self.yields
    }

    pub fn feature_row(&self, row: usize) -> ArrayView1<'_, f64> {
        self.features.row(row)
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    /// Distinct group keys in sorted order.
    pub fn distinct_groups(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.groups.iter().map(|g| g.as_str()).collect();
        set.into_iter().map(|g| g.to_string()).collect()
    }

    /// Row indices per group, groups in sorted order.
    pub fn group_indices(&self) -> BTreeMap<String, Vec<usize>> {
        let mut map: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, g) in self.groups.iter().enumerate() {
            map.entry(g.clone()).or_default().push(i);
        }
        map
    }

    pub fn rows_in_group(&self, group: &str) -> Vec<usize> {
        self.groups
            .iter()
            .enumerate()
            .filter(|(_, g)| g.as_str() == group)
            .map(|(i, _)| i)
            .collect()
    }

    /// Copy of the table with a replacement feature matrix of the same
    /// shape. Used by permutation importance to evaluate shuffled columns.
    pub fn with_features(&self, features: Array2<f64>) -> Result<Self> {
        if features.dim() != self.features.dim() {
            return Err(Error::invalid("replacement features have a different shape"));
        }
        DescriptorTable::new(
            self.row_ids.clone(),
            self.groups.clone(),
            features,
            self.yields.clone(),
            self.feature_names.clone(),
        )
    }
}

/// Column-role mapping for descriptor CSVs.
///
/// The on-disk schema is one header row with an id column, a group column,
/// any number of feature columns, and a yield column (percent, `[0, 100]`,
/// `.` decimal separator, UTF-8). When `feature_columns` is `None`, every
/// column that is not id/group/yield is a feature.
#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub id_column: String,
    pub group_column: String,
    pub yield_column: String,
    pub feature_columns: Option<Vec<String>>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            id_column: "id".to_string(),
            group_column: "group".to_string(),
            yield_column: "yield".to_string(),
            feature_columns: None,
        }
    }
}

/// Load and validate a descriptor CSV. Rows violating the table invariants
/// are rejected with an error naming the 1-based data row and the column;
/// nothing is repaired silently.
pub fn load_descriptor_table(path: &Path, schema: &CsvSchema) -> Result<DescriptorTable> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);

    let header: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();

    let mut seen = BTreeSet::new();
    for name in &header {
        if !seen.insert(name.clone()) {
            return Err(Error::DuplicateColumn { name: name.clone() });
        }
    }

    let col_index = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn {
                name: name.to_string(),
            })
    };

    let id_idx = col_index(&schema.id_column)?;
    let group_idx = col_index(&schema.group_column)?;
    let yield_idx = col_index(&schema.yield_column)?;

    let feature_names: Vec<String> = match &schema.feature_columns {
        Some(cols) => {
            for c in cols {
                col_index(c)?;
            }
            cols.clone()
        }
        None => header
            .iter()
            .filter(|h| {
                h.as_str() != schema.id_column
                    && h.as_str() != schema.group_column
                    && h.as_str() != schema.yield_column
            })
            .cloned()
            .collect(),
    };
    if feature_names.is_empty() {
        return Err(Error::invalid("schema selects no feature columns"));
    }
    let feature_idx: Vec<usize> = feature_names
        .iter()
        .map(|n| col_index(n))
        .collect::<Result<_>>()?;

    let mut row_ids = Vec::new();
    let mut groups = Vec::new();
    let mut yields = Vec::new();
    let mut flat_features = Vec::new();

    for (row_num, record) in reader.records().enumerate() {
        let row = row_num + 1; // 1-based data row
        let record = record?;
        let get = |idx: usize| record.get(idx).unwrap_or("").trim();

        let parse_cell = |idx: usize, column: &str| -> Result<f64> {
            let raw = get(idx);
            let value: f64 = raw.parse().map_err(|_| Error::BadCell {
                row,
                column: column.to_string(),
                message: format!("cannot parse {raw:?} as a number"),
            })?;
            if !value.is_finite() {
                return Err(Error::BadCell {
                    row,
                    column: column.to_string(),
                    message: format!("non-finite value {raw:?}"),
                });
            }
            Ok(value)
        };

        let group = get(group_idx);
        if group.is_empty() {
            return Err(Error::BadCell {
                row,
                column: schema.group_column.clone(),
                message: "empty group key".to_string(),
            });
        }

        let y = parse_cell(yield_idx, &schema.yield_column)?;
        if !(0.0..=100.0).contains(&y) {
            return Err(Error::BadCell {
                row,
                column: schema.yield_column.clone(),
                message: format!("yield {y} outside [0, 100]"),
            });
        }

        for (&idx, name) in feature_idx.iter().zip(&feature_names) {
            flat_features.push(parse_cell(idx, name)?);
        }
        row_ids.push(get(id_idx).to_string());
        groups.push(group.to_string());
        yields.push(y);
    }

    let n = row_ids.len();
    let p = feature_names.len();
    let features = Array2::from_shape_vec((n, p), flat_features)
        .map_err(|e| Error::invalid(format!("feature matrix shape: {e}")))?;
    DescriptorTable::new(row_ids, groups, features, yields, feature_names)
}

/// Write a table in the standard schema: `id,group,<features...>,yield`.
/// Floats are printed in shortest round-trip form, so reloading reproduces
/// bit-identical values.
pub fn write_descriptor_table(table: &DescriptorTable, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| Error::io(path, e))?,
    );
    let mut write = |line: &str| -> Result<()> {
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))
    };

    let mut header = vec!["id".to_string(), "group".to_string()];
    header.extend(table.feature_names().iter().cloned());
    header.push("yield".to_string());
    write(&header.join(","))?;

    for i in 0..table.n_rows() {
        let mut fields = vec![table.row_id(i).to_string(), table.group(i).to_string()];
        fields.extend(table.feature_row(i).iter().map(|v| format!("{v}")));
        fields.push(format!("{}", table.yield_value(i)));
        write(&fields.join(","))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Descriptor vector of one chemical component of a reaction.
#[derive(Debug, Clone)]
pub struct ComponentDescriptors {
    pub role: String,
    pub values: Vec<f64>,
}

impl ComponentDescriptors {
    pub fn new(role: impl Into<String>, values: Vec<f64>) -> Self {
        ComponentDescriptors {
            role: role.into(),
            values,
        }
    }
}

/// Encode a reaction as the in-order concatenation of its component
/// descriptor vectors.
pub fn encode_reaction(components: &[ComponentDescriptors]) -> Result<Vec<f64>> {
    if components.is_empty() {
        return Err(Error::invalid("cannot encode a reaction with no components"));
    }
    let mut out = Vec::with_capacity(components.iter().map(|c| c.values.len()).sum());
    for c in components {
        if c.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "component {:?} has a non-finite descriptor value",
                c.role
            )));
        }
        out.extend_from_slice(&c.values);
    }
    Ok(out)
}

/// Fixes the component order and per-role descriptor lengths for one
/// dataset, so every encoded reaction has the same layout.
#[derive(Debug, Clone)]
pub struct ReactionEncoder {
    role_lengths: Vec<(String, usize)>,
}

impl ReactionEncoder {
    /// Fix the layout from a first example reaction.
    pub fn from_example(components: &[ComponentDescriptors]) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::invalid("cannot fix a layout from zero components"));
        }
        Ok(ReactionEncoder {
            role_lengths: components
                .iter()
                .map(|c| (c.role.clone(), c.values.len()))
                .collect(),
        })
    }

    pub fn encoded_len(&self) -> usize {
        self.role_lengths.iter().map(|(_, l)| l).sum()
    }

    /// Encode a reaction, enforcing the fixed component order and the
    /// dataset-wide descriptor length for each role.
    pub fn encode(&self, components: &[ComponentDescriptors]) -> Result<Vec<f64>> {
        if components.len() != self.role_lengths.len() {
            return Err(Error::invalid(format!(
                "expected {} components, got {}",
                self.role_lengths.len(),
                components.len()
            )));
        }
        for (c, (role, len)) in components.iter().zip(&self.role_lengths) {
            if &c.role != role {
                return Err(Error::invalid(format!(
                    "component order mismatch: expected role {role:?}, got {:?}",
                    c.role
                )));
            }
            if c.values.len() != *len {
                return Err(Error::invalid(format!(
                    "role {role:?}: descriptor length {} differs from the dataset-wide length {len}",
                    c.values.len()
                )));
            }
        }
        encode_reaction(components)
    }
}

/// Group-wise out-of-distribution split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    pub train_groups: BTreeSet<String>,
    pub val_groups: BTreeSet<String>,
    pub test_groups: BTreeSet<String>,
}

impl SplitSpec {
    /// Check pairwise disjointness and coverage of the table's group set.
    pub fn validate(&self, table: &DescriptorTable) -> Result<()> {
        let all: BTreeSet<String> = table.distinct_groups().into_iter().collect();
        let mut union = BTreeSet::new();
        let mut total = 0usize;
        for set in [&self.train_groups, &self.val_groups, &self.test_groups] {
            total += set.len();
            union.extend(set.iter().cloned());
        }
        if union.len() != total {
            return Err(Error::invalid("split sets are not pairwise disjoint"));
        }
        if union != all {
            return Err(Error::invalid("split does not cover the table's groups"));
        }
        Ok(())
    }
}

/// Split the table's distinct groups into train/val/test.
///
/// Groups are taken in sorted order, shuffled by a seeded `splitmix64`
/// Fisher-Yates pass, and partitioned: the first `n_train` go to train, the
/// next `n_val` to validation, the remainder to test. Deterministic given
/// `(table, n_train, n_val, seed)`.
pub fn make_group_split(
    table: &DescriptorTable,
    n_train: usize,
    n_val: usize,
    seed: u64,
) -> Result<SplitSpec> {
    let mut groups = table.distinct_groups();
    if n_train + n_val >= groups.len() {
        return Err(Error::InvalidConfig(format!(
            "n_train + n_val = {} must be below the group count {}",
            n_train + n_val,
            groups.len()
        )));
    }
    let mut rng = SplitMix64::new(seed);
    shuffle(&mut groups, &mut rng);

    let train_groups: BTreeSet<String> = groups[..n_train].iter().cloned().collect();
    let val_groups: BTreeSet<String> = groups[n_train..n_train + n_val].iter().cloned().collect();
    let test_groups: BTreeSet<String> = groups[n_train + n_val..].iter().cloned().collect();
    Ok(SplitSpec {
        train_groups,
        val_groups,
        test_groups,
    })
}

/// Split with explicitly named train/val groups (the hand-picked
/// alternative to [`make_group_split`]); every remaining group goes to
/// test.
pub fn make_explicit_split(
    table: &DescriptorTable,
    train_groups: &[String],
    val_groups: &[String],
) -> Result<SplitSpec> {
    let split = SplitSpec {
        train_groups: train_groups.iter().cloned().collect(),
        val_groups: val_groups.iter().cloned().collect(),
        test_groups: table
            .distinct_groups()
            .into_iter()
            .filter(|g| !train_groups.contains(g) && !val_groups.contains(g))
            .collect(),
    };
    if split.test_groups.is_empty() {
        return Err(Error::InvalidConfig(
            "explicit split leaves no test groups".into(),
        ));
    }
    split.validate(table)?;
    Ok(split)
}

/// One few-shot task: `k` support rows from a single group plus that group's
/// remaining rows as the query set.
#[derive(Debug, Clone)]
pub struct Task {
    pub group: String,
    pub support_indices: Vec<usize>,
    pub query_indices: Vec<usize>,
}

/// Sample a task: pick a group uniformly from `groups`, then `k` support
/// rows from it without replacement; the group's remaining rows become the
/// query set. Errors if the picked group has no query row left.
pub fn sample_task(
    table: &DescriptorTable,
    groups: &BTreeSet<String>,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Task> {
    if groups.is_empty() {
        return Err(Error::invalid("no groups to sample a task from"));
    }
    if k == 0 {
        return Err(Error::InvalidConfig("support size must be at least 1".into()));
    }
    let ordered: Vec<&String> = groups.iter().collect();
    let group = ordered[rng.random_range(0..ordered.len())].clone();

    let rows = table.rows_in_group(&group);
    if rows.len() <= k {
        return Err(Error::invalid(format!(
            "group {group:?} has {} rows; needs more than k = {k} so a query row remains",
            rows.len()
        )));
    }

    let picked = index::sample(rng, rows.len(), k);
    let mut support: Vec<usize> = picked.iter().map(|i| rows[i]).collect();
    support.sort_unstable();
    let support_set: BTreeSet<usize> = support.iter().copied().collect();
    let query: Vec<usize> = rows
        .iter()
        .copied()
        .filter(|r| !support_set.contains(r))
        .collect();

    Ok(Task {
        group,
        support_indices: support,
        query_indices: query,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn toy_table() -> DescriptorTable {
        DescriptorTable::new(
            vec!["r1".into(), "r2".into(), "r3".into()],
            vec!["A".into(), "A".into(), "B".into()],
            array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]],
            vec![10.0, 20.0, 30.0],
            vec!["f1".into(), "f2".into()],
        )
        .unwrap()
    }

    fn write_csv(contents: &str) -> tempfile::NamedTempFile {
        let file = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(file.path(), contents).unwrap();
        file
    }

    #[test]
    fn load_small_csv() {
        let file = write_csv("id,group,f1,f2,yield\nr1,A,1,2,10\nr2,A,3,4,20\nr3,B,5,6,30\n");
        let table = load_descriptor_table(file.path(), &CsvSchema::default()).unwrap();
        assert_eq!(table.n_rows(), 3);
        assert_eq!(table.n_features(), 2);
        assert_eq!(table.distinct_groups(), vec!["A".to_string(), "B".to_string()]);
        assert_eq!(table.yield_value(2), 30.0);
    }

    #[test]
    fn bad_cell_names_row_and_column() {
        let file = write_csv("id,group,f1,f2,yield\nr1,A,1,2,10\nr2,A,abc,4,20\n");
        let err = load_descriptor_table(file.path(), &CsvSchema::default()).unwrap_err();
        match err {
            Error::BadCell { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "f1");
            }
            other => panic!("expected BadCell, got {other:?}"),
        }
    }

    #[test]
    fn rejects_yield_outside_range() {
        let file = write_csv("id,group,f1,yield\nr1,A,1,10\nr2,B,2,105\n");
        let err = load_descriptor_table(file.path(), &CsvSchema::default()).unwrap_err();
        assert!(matches!(err, Error::BadCell { row: 2, .. }), "{err:?}");
    }

    #[test]
    fn rejects_non_finite_and_missing_and_duplicate_columns() {
        let nan = write_csv("id,group,f1,yield\nr1,A,NaN,10\n");
        assert!(matches!(
            load_descriptor_table(nan.path(), &CsvSchema::default()),
            Err(Error::BadCell { .. })
        ));

        let missing = write_csv("id,g,f1,yield\nr1,A,1,10\n");
        assert!(matches!(
            load_descriptor_table(missing.path(), &CsvSchema::default()),
            Err(Error::MissingColumn { .. })
        ));

        let dup = write_csv("id,group,f1,f1,yield\nr1,A,1,2,10\n");
        assert!(matches!(
            load_descriptor_table(dup.path(), &CsvSchema::default()),
            Err(Error::DuplicateColumn { .. })
        ));

        assert!(matches!(
            load_descriptor_table(Path::new("/nonexistent/x.csv"), &CsvSchema::default()),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn csv_round_trip_is_bit_identical() {
        let table = DescriptorTable::new(
            vec!["a".into(), "b".into()],
            vec!["G1".into(), "G2".into()],
            array![
                [0.1, 1.0 / 3.0, 2.0_f64.sqrt()],
                [-0.0, 1e-300, 99.999999999999]
            ],
            vec![12.345678901234567, 0.0],
            vec!["f1".into(), "f2".into(), "f3".into()],
        )
        .unwrap();
        let file = tempfile::NamedTempFile::new().unwrap();
        write_descriptor_table(&table, file.path()).unwrap();
        let reloaded = load_descriptor_table(file.path(), &CsvSchema::default()).unwrap();
        for i in 0..table.n_rows() {
            assert_eq!(
                table.yield_value(i).to_bits(),
                reloaded.yield_value(i).to_bits()
            );
            for (a, b) in table.feature_row(i).iter().zip(reloaded.feature_row(i)) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn encode_concatenates_in_order() {
        let components = vec![
            ComponentDescriptors::new("aryl halide", vec![1.0, 2.0]),
            ComponentDescriptors::new("base", vec![3.0]),
        ];
        assert_eq!(encode_reaction(&components).unwrap(), vec![1.0, 2.0, 3.0]);
        let single = vec![ComponentDescriptors::new("x", vec![5.0, 6.0, 7.0])];
        assert_eq!(encode_reaction(&single).unwrap(), vec![5.0, 6.0, 7.0]);
        assert!(encode_reaction(&[]).is_err());
    }

    #[test]
    fn encoder_enforces_role_lengths_and_order() {
        let layout = vec![
            ComponentDescriptors::new("halide", vec![1.0, 2.0]),
            ComponentDescriptors::new("catalyst", vec![3.0, 4.0, 5.0]),
            ComponentDescriptors::new("additive", vec![6.0]),
            ComponentDescriptors::new("base", vec![7.0, 8.0]),
        ];
        let encoder = ReactionEncoder::from_example(&layout).unwrap();
        assert_eq!(encoder.encoded_len(), 8);
        let encoded = encoder.encode(&layout).unwrap();
        assert_eq!(encoded, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);

        let wrong_len = vec![
            ComponentDescriptors::new("halide", vec![1.0]),
            ComponentDescriptors::new("catalyst", vec![3.0, 4.0, 5.0]),
            ComponentDescriptors::new("additive", vec![6.0]),
            ComponentDescriptors::new("base", vec![7.0, 8.0]),
        ];
        assert!(encoder.encode(&wrong_len).is_err());

        let mut reordered = layout.clone();
        reordered.swap(0, 1);
        assert!(encoder.encode(&reordered).is_err());
    }

    #[test]
    fn split_counts_and_determinism() {
        let mut ids = Vec::new();
        let mut groups = Vec::new();
        let mut yields = Vec::new();
        for g in 0..22 {
            for r in 0..3 {
                ids.push(format!("g{g}r{r}"));
                groups.push(format!("G{g:02}"));
                yields.push(50.0);
            }
        }
        let n = ids.len();
        let table = DescriptorTable::new(
            ids,
            groups,
            Array2::zeros((n, 1)),
            yields,
            vec!["f".into()],
        )
        .unwrap();

        let split = make_group_split(&table, 4, 1, 7).unwrap();
        assert_eq!(split.train_groups.len(), 4);
        assert_eq!(split.val_groups.len(), 1);
        assert_eq!(split.test_groups.len(), 17);
        split.validate(&table).unwrap();

        assert_eq!(split, make_group_split(&table, 4, 1, 7).unwrap());
        assert!(make_group_split(&table, 20, 2, 7).is_err());

        // hand-picked alternative
        let explicit = make_explicit_split(
            &table,
            &["G00".into(), "G05".into()],
            &["G21".into()],
        )
        .unwrap();
        assert_eq!(explicit.test_groups.len(), 19);
        explicit.validate(&table).unwrap();
        assert!(make_explicit_split(&table, &["nope".into()], &[]).is_err());
    }

    #[test]
    fn three_group_split() {
        let table = toy_table();
        // toy table has 2 groups; build a 3-group table
        let table3 = DescriptorTable::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec!["A".into(), "B".into(), "C".into()],
            Array2::zeros((3, 1)),
            vec![1.0, 2.0, 3.0],
            vec!["f".into()],
        )
        .unwrap();
        let split = make_group_split(&table3, 2, 0, 0).unwrap();
        assert_eq!(split.test_groups.len(), 1);
        drop(table);
    }

    #[test]
    fn task_sampling_contract() {
        let mut ids = Vec::new();
        let mut groups = Vec::new();
        let mut yields = Vec::new();
        for g in ["A", "B"] {
            for r in 0..5 {
                ids.push(format!("{g}{r}"));
                groups.push(g.to_string());
                yields.push(10.0 * (r as f64 + 1.0));
            }
        }
        let table = DescriptorTable::new(
            ids,
            groups,
            Array2::zeros((10, 1)),
            yields,
            vec!["f".into()],
        )
        .unwrap();
        let all: BTreeSet<String> = table.distinct_groups().into_iter().collect();

        let mut rng = crate::rng::chacha(3);
        let task = sample_task(&table, &all, 3, &mut rng).unwrap();
        assert_eq!(task.support_indices.len(), 3);
        assert_eq!(task.query_indices.len(), 2);
        for &i in task.support_indices.iter().chain(&task.query_indices) {
            assert_eq!(table.group(i), task.group);
        }
        let overlap = task
            .support_indices
            .iter()
            .any(|i| task.query_indices.contains(i));
        assert!(!overlap);

        // k equal to the group size leaves no query row
        let mut rng = crate::rng::chacha(3);
        assert!(sample_task(&table, &all, 5, &mut rng).is_err());

        // smallest legal case: 2-row group, k=1
        let small = DescriptorTable::new(
            vec!["a".into(), "b".into()],
            vec!["G".into(), "G".into()],
            Array2::zeros((2, 1)),
            vec![1.0, 2.0],
            vec!["f".into()],
        )
        .unwrap();
        let only: BTreeSet<String> = small.distinct_groups().into_iter().collect();
        let mut rng = crate::rng::chacha(0);
        let t = sample_task(&small, &only, 1, &mut rng).unwrap();
        assert_eq!(t.support_indices.len(), 1);
        assert_eq!(t.query_indices.len(), 1);
        assert_ne!(t.support_indices[0], t.query_indices[0]);
    }

    proptest! {
        #[test]
        fn split_always_disjoint_and_covering(seed in any::<u64>(), n_groups in 3usize..12, n_train in 1usize..4) {
            let n_val = 1usize;
            prop_assume!(n_train + n_val < n_groups);
            let mut ids = Vec::new();
            let mut groups = Vec::new();
            let mut yields = Vec::new();
            for g in 0..n_groups {
                ids.push(format!("r{g}"));
                groups.push(format!("G{g}"));
                yields.push(1.0);
            }
            let table = DescriptorTable::new(ids, groups, Array2::zeros((n_groups, 1)), yields, vec!["f".into()]).unwrap();
            let split = make_group_split(&table, n_train, n_val, seed).unwrap();
            split.validate(&table).unwrap();
            prop_assert_eq!(split.train_groups.len(), n_train);
            prop_assert_eq!(split.val_groups.len(), n_val);
        }

        #[test]
        fn encode_length_is_sum(len_a in 1usize..6, len_b in 1usize..6) {
            let a = ComponentDescriptors::new("a", vec![1.0; len_a]);
            let b = ComponentDescriptors::new("b", vec![2.0; len_b]);
            let encoded = encode_reaction(&[a, b]).unwrap();
            prop_assert_eq!(encoded.len(), len_a + len_b);
        }
    }
}
