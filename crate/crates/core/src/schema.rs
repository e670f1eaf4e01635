//! Prompt serializations of a catalog or a subset of its tables.
//!
//! Four layouts are supported: DDL-style code, code followed by sample
//! rows, M-Schema, and M-Schema followed by sample rows. Rendering is a
//! pure function of the subset and the kind.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{DatabaseCatalog, TableInfo};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SchemaError {
    #[error("unknown table `{0}`")]
    UnknownTable(String),
    #[error("schema subset must name at least one table")]
    EmptySubset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SerializationKind {
    Code,
    CodeWithSample,
    MSchema,
    MSchemaWithSample,
}

impl SerializationKind {
    pub const ALL: [SerializationKind; 4] = [
        SerializationKind::Code,
        SerializationKind::CodeWithSample,
        SerializationKind::MSchema,
        SerializationKind::MSchemaWithSample,
    ];

    pub fn with_samples(self) -> bool {
        matches!(self, Self::CodeWithSample | Self::MSchemaWithSample)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Code => "code",
            Self::CodeWithSample => "code-with-sample",
            Self::MSchema => "m-schema",
            Self::MSchemaWithSample => "m-schema-with-sample",
        }
    }
}

impl fmt::Display for SerializationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SerializationKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == norm)
            .ok_or_else(|| format!("unknown serialization `{s}`"))
    }
}

/// A non-empty selection of catalog tables.
///
/// [`SchemaSubset::new`] renders in catalog order; [`SchemaSubset::ordered`]
/// keeps the caller's order.
#[derive(Debug, Clone)]
pub struct SchemaSubset<'a> {
    catalog: &'a DatabaseCatalog,
    indices: Vec<usize>,
}

impl<'a> SchemaSubset<'a> {
    pub fn new<S: AsRef<str>>(
        catalog: &'a DatabaseCatalog,
        names: impl IntoIterator<Item = S>,
    ) -> Result<Self, SchemaError> {
        let mut subset = Self::ordered(catalog, names)?;
        subset.indices.sort_unstable();
        Ok(subset)
    }

    pub fn ordered<S: AsRef<str>>(
        catalog: &'a DatabaseCatalog,
        names: impl IntoIterator<Item = S>,
    ) -> Result<Self, SchemaError> {
        let mut indices = Vec::new();
        for name in names {
            let name = name.as_ref();
            let idx = catalog
                .table_index(name)
                .ok_or_else(|| SchemaError::UnknownTable(name.to_string()))?;
            if !indices.contains(&idx) {
                indices.push(idx);
            }
        }
        if indices.is_empty() {
            return Err(SchemaError::EmptySubset);
        }
        Ok(Self { catalog, indices })
    }

    pub fn full(catalog: &'a DatabaseCatalog) -> Self {
        Self {
            catalog,
            indices: (0..catalog.tables.len()).collect(),
        }
    }

    pub fn catalog(&self) -> &'a DatabaseCatalog {
        self.catalog
    }

    pub fn tables(&self) -> impl Iterator<Item = &'a TableInfo> + '_ {
        self.indices.iter().map(|&i| &self.catalog.tables[i])
    }

    pub fn table_names(&self) -> Vec<&'a str> {
        self.tables().map(|t| t.name.as_str()).collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tables().any(|t| t.name.eq_ignore_ascii_case(name))
    }
}

/// Render `subset` in the requested layout.
pub fn render(subset: &SchemaSubset<'_>, kind: SerializationKind) -> String {
    match kind {
        SerializationKind::Code | SerializationKind::CodeWithSample => render_code(subset, kind),
        SerializationKind::MSchema | SerializationKind::MSchemaWithSample => {
            render_m_schema(subset, kind)
        }
    }
}

/// Render a subset given by table names.
pub fn render_tables<S: AsRef<str>>(
    catalog: &DatabaseCatalog,
    names: impl IntoIterator<Item = S>,
    kind: SerializationKind,
) -> Result<String, SchemaError> {
    Ok(render(&SchemaSubset::new(catalog, names)?, kind))
}

fn is_plain_ident(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn ddl_ident(name: &str) -> String {
    if is_plain_ident(name) {
        name.to_string()
    } else {
        format!("`{}`", name.replace('`', "``"))
    }
}

fn render_code(subset: &SchemaSubset<'_>, kind: SerializationKind) -> String {
    let mut out = String::new();
    for (i, table) in subset.tables().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let mut lines: Vec<String> = table
            .columns
            .iter()
            .map(|c| {
                if c.data_type.is_empty() {
                    format!("  {}", ddl_ident(&c.name))
                } else {
                    format!("  {} {}", ddl_ident(&c.name), c.data_type)
                }
            })
            .collect();
        let pks: Vec<String> = table
            .columns
            .iter()
            .filter(|c| c.is_primary_key)
            .map(|c| ddl_ident(&c.name))
            .collect();
        if !pks.is_empty() {
            lines.push(format!("  PRIMARY KEY ({})", pks.join(", ")));
        }
        for fk in &table.foreign_keys {
            lines.push(format!(
                "  FOREIGN KEY ({}) REFERENCES {}({})",
                ddl_ident(&fk.local_column),
                ddl_ident(&fk.referenced_table),
                ddl_ident(&fk.referenced_column)
            ));
        }
        let _ = writeln!(out, "CREATE TABLE {} (", ddl_ident(&table.name));
        out.push_str(&lines.join(",\n"));
        out.push_str("\n);\n");
        if kind.with_samples() {
            push_sample_block(&mut out, table);
        }
    }
    out
}

fn render_m_schema(subset: &SchemaSubset<'_>, kind: SerializationKind) -> String {
    let catalog = subset.catalog();
    let mut out = String::new();
    let _ = writeln!(out, "【DB_ID】 {}", catalog.db_id);
    out.push_str("【Schema】\n");
    for table in subset.tables() {
        let _ = writeln!(out, "# Table: {}", table.name);
        out.push_str("[\n");
        let lines: Vec<String> = table
            .columns
            .iter()
            .map(|c| {
                let data_type = if c.data_type.is_empty() {
                    "ANY".to_string()
                } else {
                    c.data_type.to_ascii_uppercase()
                };
                let mut parts = vec![format!("{}:{}", c.name, data_type)];
                if let Some(d) = &c.description {
                    parts.push(d.clone());
                }
                if c.is_primary_key {
                    parts.push("Primary key".to_string());
                }
                if !c.sample_values.is_empty() {
                    parts.push(format!("Examples: [{}]", c.sample_values.join(", ")));
                }
                format!("({})", parts.join(", "))
            })
            .collect();
        out.push_str(&lines.join(",\n"));
        out.push_str("\n]\n");
        if kind.with_samples() {
            push_sample_block(&mut out, table);
        }
    }

    let fks: Vec<String> = subset
        .tables()
        .flat_map(|t| t.foreign_keys.iter().map(move |fk| (t, fk)))
        .filter(|(_, fk)| subset.contains(&fk.referenced_table))
        .map(|(t, fk)| {
            format!(
                "{}.{}={}.{}",
                t.name, fk.local_column, fk.referenced_table, fk.referenced_column
            )
        })
        .collect();
    if !fks.is_empty() {
        out.push_str("【Foreign keys】\n");
        for fk in fks {
            out.push_str(&fk);
            out.push('\n');
        }
    }
    out
}

fn push_sample_block(out: &mut String, table: &TableInfo) {
    out.push_str("```\n");
    let _ = writeln!(out, "-- {} sample rows", table.name);
    let header: Vec<&str> = table.columns.iter().map(|c| c.name.as_str()).collect();
    out.push_str(&header.join(" | "));
    out.push('\n');
    for row in &table.sample_rows {
        out.push_str(&row.join(" | "));
        out.push('\n');
    }
    out.push_str("```\n");
}

/// Table names that appear as table headers in a rendered schema.
///
/// Inverse of the header lines emitted by [`render`]; used to check prompt
/// contents.
pub fn rendered_table_headers(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("# Table: ") {
            out.push(rest.to_string());
        } else if let Some(rest) = line.strip_prefix("CREATE TABLE ") {
            let name = rest.trim_end_matches(" (");
            let name = name
                .strip_prefix('`')
                .and_then(|n| n.strip_suffix('`'))
                .map(|n| n.replace("``", "`"))
                .unwrap_or_else(|| name.to_string());
            out.push(name);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{ColumnInfo, ForeignKey};
    use std::path::PathBuf;

    fn col(name: &str, ty: &str, pk: bool) -> ColumnInfo {
        ColumnInfo {
            name: name.into(),
            data_type: ty.into(),
            description: None,
            is_primary_key: pk,
            sample_values: vec!["1".into()],
        }
    }

    fn catalog(n: usize) -> DatabaseCatalog {
        let tables = (0..n)
            .map(|i| TableInfo {
                name: format!("t{i}"),
                columns: vec![col("id", "INTEGER", true), col("v", "text", false)],
                foreign_keys: if i > 0 {
                    vec![ForeignKey {
                        local_column: "id".into(),
                        referenced_table: "t0".into(),
                        referenced_column: "id".into(),
                    }]
                } else {
                    vec![]
                },
                sample_rows: vec![vec!["1".into(), "a".into()]],
            })
            .collect();
        DatabaseCatalog {
            db_id: "db".into(),
            tables,
            source_path: PathBuf::new(),
        }
    }

    #[test]
    fn code_has_one_create_table_per_table() {
        let cat = catalog(1);
        let text = render(&SchemaSubset::full(&cat), SerializationKind::Code);
        assert_eq!(text.matches("CREATE TABLE").count(), 1);
        assert!(text.contains("PRIMARY KEY (id)"));
    }

    #[test]
    fn subset_limits_headers() {
        let cat = catalog(5);
        for kind in SerializationKind::ALL {
            let subset = SchemaSubset::new(&cat, ["t3", "T1"]).unwrap();
            let text = render(&subset, kind);
            assert_eq!(rendered_table_headers(&text), vec!["t1", "t3"], "{kind}");
        }
    }

    #[test]
    fn ordered_subset_keeps_caller_order() {
        let cat = catalog(3);
        let subset = SchemaSubset::ordered(&cat, ["t2", "t0"]).unwrap();
        assert_eq!(subset.table_names(), vec!["t2", "t0"]);
    }

    #[test]
    fn foreign_keys_outside_subset_are_dropped() {
        let cat = catalog(3);
        let text = render_tables(&cat, ["t1", "t2"], SerializationKind::MSchema).unwrap();
        assert!(!text.contains("【Foreign keys】"));
        let text = render_tables(&cat, ["t0", "t2"], SerializationKind::MSchema).unwrap();
        assert!(text.contains("【Foreign keys】\nt2.id=t0.id\n"));
    }

    #[test]
    fn invalid_subsets() {
        let cat = catalog(2);
        assert_eq!(
            SchemaSubset::new(&cat, ["nope"]).unwrap_err(),
            SchemaError::UnknownTable("nope".into())
        );
        assert_eq!(
            SchemaSubset::new(&cat, Vec::<String>::new()).unwrap_err(),
            SchemaError::EmptySubset
        );
    }

    #[test]
    fn kind_parses_from_cli_spelling() {
        for kind in SerializationKind::ALL {
            assert_eq!(kind.as_str().parse::<SerializationKind>().unwrap(), kind);
        }
        assert_eq!(
            "M_SCHEMA_WITH_SAMPLE".parse::<SerializationKind>().unwrap(),
            SerializationKind::MSchemaWithSample
        );
    }

    #[test]
    fn length_is_linear_in_columns_and_rows() {
        for n in [1usize, 10, 100] {
            let cat = catalog(n);
            let units = cat.column_count() + cat.tables.iter().map(|t| t.sample_rows.len()).sum::<usize>();
            for kind in SerializationKind::ALL {
                let text = render(&SchemaSubset::full(&cat), kind);
                assert!(text.len() < 80 * units + 64, "{kind} n={n} len={}", text.len());
            }
        }
    }

    #[test]
    fn quoted_identifiers_round_trip_through_headers() {
        let mut cat = catalog(1);
        cat.tables[0].name = "Player Attributes".into();
        let text = render(&SchemaSubset::full(&cat), SerializationKind::Code);
        assert!(text.starts_with("CREATE TABLE `Player Attributes` ("));
        assert_eq!(rendered_table_headers(&text), vec!["Player Attributes"]);
    }
}
