use std::collections::BTreeMap;

/// A column of a [`DataTable`]; `None` marks a missing cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Num(Vec<Option<f64>>),
    Cat(Vec<Option<String>>),
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Num(v) => v.len(),
            Column::Cat(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The cell as a group key. Numeric cells use their shortest round-trip
    /// representation.
    pub fn key(&self, row: usize) -> Option<String> {
        match self {
            Column::Num(v) => v[row].filter(|x| x.is_finite()).map(|x| x.to_string()),
            Column::Cat(v) => v[row].clone(),
        }
    }

    fn select(&self, rows: &[usize]) -> Column {
        match self {
            Column::Num(v) => Column::Num(rows.iter().map(|&i| v[i]).collect()),
            Column::Cat(v) => Column::Cat(rows.iter().map(|&i| v[i].clone()).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DataTable {
    n_rows: usize,
    columns: BTreeMap<String, Column>,
}

impl DataTable {
    pub fn new(n_rows: usize) -> Self {
        Self {
            n_rows,
            columns: BTreeMap::new(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.columns.keys().map(String::as_str)
    }

    /// Panics if the column length differs from the table's row count.
    pub fn insert(&mut self, name: impl Into<String>, col: Column) {
        assert_eq!(col.len(), self.n_rows, "column length mismatch");
        self.columns.insert(name.into(), col);
    }

    pub fn add_numeric(&mut self, name: impl Into<String>, values: Vec<Option<f64>>) {
        self.insert(name, Column::Num(values));
    }

    pub fn add_complete(&mut self, name: impl Into<String>, values: Vec<f64>) {
        self.insert(name, Column::Num(values.into_iter().map(Some).collect()));
    }

    pub fn add_categorical(&mut self, name: impl Into<String>, values: Vec<Option<String>>) {
        self.insert(name, Column::Cat(values));
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.get(name)
    }

    pub fn numeric(&self, name: &str) -> Option<&[Option<f64>]> {
        match self.columns.get(name)? {
            Column::Num(v) => Some(v),
            Column::Cat(_) => None,
        }
    }

    pub fn categorical(&self, name: &str) -> Option<&[Option<String>]> {
        match self.columns.get(name)? {
            Column::Cat(v) => Some(v),
            Column::Num(_) => None,
        }
    }

    pub fn select_rows(&self, rows: &[usize]) -> DataTable {
        DataTable {
            n_rows: rows.len(),
            columns: self.columns.iter().map(|(k, c)| (k.clone(), c.select(rows))).collect(),
        }
    }

    /// Splits rows by the key in `name`, in key order. Rows with a missing
    /// key are left out.
    pub fn split_by(&self, name: &str) -> Option<Vec<(String, DataTable)>> {
        let col = self.columns.get(name)?;
        let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for i in 0..self.n_rows {
            if let Some(k) = col.key(i) {
                groups.entry(k).or_default().push(i);
            }
        }
        Some(
            groups
                .into_iter()
                .map(|(k, rows)| (k, self.select_rows(&rows)))
                .collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_and_select() {
        let mut t = DataTable::new(4);
        t.add_complete("x", vec![1.0, 2.0, 3.0, 4.0]);
        t.add_categorical("g", vec![Some("b".into()), Some("a".into()), None, Some("b".into())]);
        let parts = t.split_by("g").unwrap();
        assert_eq!(parts.len(), 2);
        assert_eq!(parts[0].0, "a");
        assert_eq!(parts[1].1.numeric("x").unwrap(), &[Some(1.0), Some(4.0)]);
        assert!(t.numeric("g").is_none());
        assert_eq!(t.column("x").unwrap().key(1).as_deref(), Some("2"));
    }

    #[test]
    #[should_panic]
    fn length_checked() {
        DataTable::new(2).add_complete("x", vec![1.0]);
    }
}
