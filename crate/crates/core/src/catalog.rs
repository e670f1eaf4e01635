//! SQLite introspection into an immutable [`DatabaseCatalog`].
//!
//! Tables and columns keep declaration order. Per-column sample values are
//! the first distinct non-null values SQLite yields; per-table sample rows
//! come from a seeded reservoir over the table scan, so re-introspecting an
//! unchanged file gives the same catalog.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rusqlite::types::ValueRef;
use rusqlite::{Connection, OpenFlags};
use serde::{Deserialize, Serialize};
use thiserror::Error;

const ELLIPSIS: &str = "...";

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("database file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("not a SQLite database: {path}: {reason}")]
    NotADatabase { path: PathBuf, reason: String },
    #[error("introspection failed for table `{table}`: {reason}")]
    IntrospectionFailed { table: String, reason: String },
    #[error("database has no user tables: {0}")]
    EmptyDatabase(PathBuf),
    #[error("unknown database id `{0}`")]
    UnknownDatabase(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingOptions {
    pub sample_value_limit: usize,
    pub sample_row_limit: usize,
    /// Literal rendering cap in characters, ellipsis excluded.
    pub max_literal_chars: usize,
    /// Rows considered by the reservoir; the rest of the table is not scanned.
    pub row_scan_limit: usize,
    pub seed: u64,
}

impl Default for SamplingOptions {
    fn default() -> Self {
        Self {
            sample_value_limit: 3,
            sample_row_limit: 3,
            max_literal_chars: 80,
            row_scan_limit: 10_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnInfo {
    pub name: String,
    pub data_type: String,
    pub description: Option<String>,
    pub is_primary_key: bool,
    pub sample_values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForeignKey {
    pub local_column: String,
    pub referenced_table: String,
    pub referenced_column: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableInfo {
    pub name: String,
    pub columns: Vec<ColumnInfo>,
    pub foreign_keys: Vec<ForeignKey>,
    pub sample_rows: Vec<Vec<String>>,
}

impl TableInfo {
    pub fn column(&self, name: &str) -> Option<&ColumnInfo> {
        self.columns
            .iter()
            .find(|c| c.name.eq_ignore_ascii_case(name))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatabaseCatalog {
    pub db_id: String,
    pub tables: Vec<TableInfo>,
    pub source_path: PathBuf,
}

impl DatabaseCatalog {
    /// Case-insensitive table lookup.
    pub fn table(&self, name: &str) -> Option<&TableInfo> {
        self.tables.iter().find(|t| t.name.eq_ignore_ascii_case(name))
    }

    /// Catalog spelling of `name`, if the table exists.
    pub fn canonical_table_name(&self, name: &str) -> Option<&str> {
        self.table(name).map(|t| t.name.as_str())
    }

    pub fn table_names(&self) -> Vec<&str> {
        self.tables.iter().map(|t| t.name.as_str()).collect()
    }

    pub fn table_index(&self, name: &str) -> Option<usize> {
        self.tables
            .iter()
            .position(|t| t.name.eq_ignore_ascii_case(name))
    }

    pub fn column_count(&self) -> usize {
        self.tables.iter().map(|t| t.columns.len()).sum()
    }
}

/// Quote an identifier for SQLite.
pub fn quote_ident(name: &str) -> String {
    format!("\"{}\"", name.replace('"', "\"\""))
}

fn open_read_only(db_path: &Path) -> Result<Connection, CatalogError> {
    if !db_path.is_file() {
        return Err(CatalogError::FileNotFound(db_path.to_path_buf()));
    }
    let conn = Connection::open_with_flags(
        db_path,
        OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX,
    )
    .map_err(|e| CatalogError::NotADatabase {
        path: db_path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok(conn)
}

/// Introspect every user table of the SQLite file at `db_path`.
///
/// The `db_id` is the file stem.
pub fn introspect(db_path: &Path, opts: &SamplingOptions) -> Result<DatabaseCatalog, CatalogError> {
    let conn = open_read_only(db_path)?;
    let not_a_db = |e: rusqlite::Error| CatalogError::NotADatabase {
        path: db_path.to_path_buf(),
        reason: e.to_string(),
    };
    let names: Vec<String> = {
        let mut stmt = conn
            .prepare(
                "SELECT name FROM sqlite_master WHERE type = 'table' \
                 AND name NOT LIKE 'sqlite\\_%' ESCAPE '\\' ORDER BY rowid",
            )
            .map_err(not_a_db)?;
        let rows = stmt
            .query_map([], |r| r.get::<_, String>(0))
            .map_err(not_a_db)?;
        rows.collect::<Result<_, _>>().map_err(not_a_db)?
    };
    if names.is_empty() {
        return Err(CatalogError::EmptyDatabase(db_path.to_path_buf()));
    }

    let mut tables = Vec::with_capacity(names.len());
    for (index, name) in names.iter().enumerate() {
        let table = introspect_table(&conn, name, index, opts).map_err(|e| {
            CatalogError::IntrospectionFailed {
                table: name.clone(),
                reason: e.to_string(),
            }
        })?;
        tables.push(table);
    }

    let db_id = db_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(DatabaseCatalog {
        db_id,
        tables,
        source_path: db_path.to_path_buf(),
    })
}

fn introspect_table(
    conn: &Connection,
    name: &str,
    index: usize,
    opts: &SamplingOptions,
) -> rusqlite::Result<TableInfo> {
    let quoted = quote_ident(name);
    let mut columns = Vec::new();
    {
        let mut stmt = conn.prepare(&format!("PRAGMA table_info({quoted})"))?;
        let mut rows = stmt.query([])?;
        while let Some(row) = rows.next()? {
            let col_name: String = row.get(1)?;
            let data_type: Option<String> = row.get(2)?;
            let pk: i64 = row.get(5)?;
            columns.push(ColumnInfo {
                name: col_name,
                data_type: data_type.unwrap_or_default(),
                description: None,
                is_primary_key: pk > 0,
                sample_values: Vec::new(),
            });
        }
    }

    let mut foreign_keys = Vec::new();
    {
        let mut stmt = conn.prepare(&format!("PRAGMA foreign_key_list({quoted})"))?;
        let mut rows = stmt.query([])?;
        while let Some(row) = rows.next()? {
            let referenced_table: String = row.get(2)?;
            let local_column: String = row.get(3)?;
            let to: Option<String> = row.get(4)?;
            let referenced_column = match to {
                Some(c) => c,
                None => primary_key_of(conn, &referenced_table)?.unwrap_or_default(),
            };
            if columns.iter().any(|c| c.name.eq_ignore_ascii_case(&local_column)) {
                foreign_keys.push(ForeignKey {
                    local_column,
                    referenced_table,
                    referenced_column,
                });
            }
        }
    }
    // pragma foreign_key_list lists constraints in reverse declaration order
    foreign_keys.reverse();

    for column in &mut columns {
        column.sample_values = sample_values(conn, &quoted, &column.name, opts)?;
    }

    let sample_rows = sample_rows(conn, &quoted, columns.len(), index, opts)?;

    Ok(TableInfo {
        name: name.to_string(),
        columns,
        foreign_keys,
        sample_rows,
    })
}

fn primary_key_of(conn: &Connection, table: &str) -> rusqlite::Result<Option<String>> {
    let mut stmt = conn.prepare(&format!("PRAGMA table_info({})", quote_ident(table)))?;
    let mut rows = stmt.query([])?;
    while let Some(row) = rows.next()? {
        if row.get::<_, i64>(5)? == 1 {
            return Ok(Some(row.get(1)?));
        }
    }
    Ok(None)
}

fn sample_values(
    conn: &Connection,
    quoted_table: &str,
    column: &str,
    opts: &SamplingOptions,
) -> rusqlite::Result<Vec<String>> {
    if opts.sample_value_limit == 0 {
        return Ok(Vec::new());
    }
    let col = quote_ident(column);
    // Over-fetch: distinct values can collide after truncation.
    let sql = format!(
        "SELECT DISTINCT {col} FROM {quoted_table} WHERE {col} IS NOT NULL LIMIT {}",
        opts.sample_value_limit * 4
    );
    let mut stmt = conn.prepare(&sql)?;
    let mut rows = stmt.query([])?;
    let mut out: Vec<String> = Vec::new();
    while let Some(row) = rows.next()? {
        let Some(rendered) = render_literal(row.get_ref(0)?, opts.max_literal_chars) else {
            continue;
        };
        if !out.contains(&rendered) {
            out.push(rendered);
        }
        if out.len() == opts.sample_value_limit {
            break;
        }
    }
    Ok(out)
}

fn sample_rows(
    conn: &Connection,
    quoted_table: &str,
    arity: usize,
    table_index: usize,
    opts: &SamplingOptions,
) -> rusqlite::Result<Vec<Vec<String>>> {
    let limit = opts.sample_row_limit;
    if limit == 0 || arity == 0 {
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(table_index as u64));
    let mut stmt = conn.prepare(&format!(
        "SELECT * FROM {quoted_table} LIMIT {}",
        opts.row_scan_limit
    ))?;
    let mut rows = stmt.query([])?;
    // (scan position, rendered row)
    let mut reservoir: Vec<(usize, Vec<String>)> = Vec::with_capacity(limit);
    let mut seen = 0usize;
    while let Some(row) = rows.next()? {
        let slot = if seen < limit {
            Some(reservoir.len())
        } else {
            let j = rng.random_range(0..=seen);
            (j < limit).then_some(j)
        };
        if let Some(slot) = slot {
            let mut rendered = Vec::with_capacity(arity);
            for i in 0..arity {
                rendered.push(
                    render_literal(row.get_ref(i)?, opts.max_literal_chars)
                        .unwrap_or_else(|| "NULL".to_string()),
                );
            }
            if slot == reservoir.len() {
                reservoir.push((seen, rendered));
            } else {
                reservoir[slot] = (seen, rendered);
            }
        }
        seen += 1;
    }
    reservoir.sort_by_key(|(pos, _)| *pos);
    Ok(reservoir.into_iter().map(|(_, r)| r).collect())
}

/// Render one stored value for prompts; `None` for NULL.
pub fn render_literal(value: ValueRef<'_>, max_chars: usize) -> Option<String> {
    let text = match value {
        ValueRef::Null => return None,
        ValueRef::Integer(i) => i.to_string(),
        ValueRef::Real(f) => format_real(f),
        ValueRef::Text(t) => String::from_utf8_lossy(t).into_owned(),
        ValueRef::Blob(b) => return Some(format!("<blob {} bytes>", b.len())),
    };
    Some(truncate_chars(&text, max_chars))
}

/// Shortest round-trip decimal form; integral reals keep a trailing `.0`.
pub fn format_real(f: f64) -> String {
    format!("{f:?}")
}

pub fn truncate_chars(text: &str, max_chars: usize) -> String {
    match text.char_indices().nth(max_chars) {
        Some((idx, _)) => format!("{}{ELLIPSIS}", &text[..idx]),
        None => text.to_string(),
    }
}

/// Fill column descriptions from BIRD-style `database_description/*.csv`
/// files. Files are matched to tables by stem, rows to columns by
/// `original_column_name`, both case-insensitively. Missing directories and
/// malformed files are skipped with a warning.
pub fn attach_descriptions(mut catalog: DatabaseCatalog, desc_dir: &Path) -> DatabaseCatalog {
    let Ok(entries) = fs::read_dir(desc_dir) else {
        return catalog;
    };
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .is_some_and(|ext| ext.eq_ignore_ascii_case("csv"))
        })
        .collect();
    files.sort();

    for path in files {
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let Some(table) = catalog
            .tables
            .iter_mut()
            .find(|t| t.name.eq_ignore_ascii_case(stem.trim()))
        else {
            warn!("description file {} matches no table", path.display());
            continue;
        };
        match read_description_csv(&path) {
            Ok(rows) => {
                for (column, description) in rows {
                    match table
                        .columns
                        .iter_mut()
                        .find(|c| c.name.eq_ignore_ascii_case(&column))
                    {
                        Some(col) => col.description = Some(description),
                        None => warn!(
                            "{}: column `{column}` not found in table `{}`",
                            path.display(),
                            table.name
                        ),
                    }
                }
            }
            Err(e) => warn!("skipping malformed description file {}: {e}", path.display()),
        }
    }
    catalog
}

fn read_description_csv(path: &Path) -> Result<Vec<(String, String)>, csv::Error> {
    let bytes = fs::read(path)?;
    // BIRD ships a mix of UTF-8 (sometimes with BOM) and latin-1 files.
    let text = String::from_utf8_lossy(&bytes);
    let text = text.trim_start_matches('\u{feff}');
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let position = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim().eq_ignore_ascii_case(name))
    };
    let (Some(name_idx), Some(desc_idx)) =
        (position("original_column_name"), position("column_description"))
    else {
        return Err(csv::Error::from(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            "missing original_column_name/column_description header",
        )));
    };
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let column = record.get(name_idx).unwrap_or("").trim();
        let description = record.get(desc_idx).unwrap_or("").trim();
        if column.is_empty() || description.is_empty() {
            continue;
        }
        out.push((column.to_string(), description.replace(['\n', '\r'], " ")));
    }
    Ok(out)
}

/// Lazily introspected catalogs for a BIRD-layout database root
/// (`<root>/<db_id>/<db_id>.sqlite`, optional `database_description/`).
#[derive(Debug)]
pub struct CatalogStore {
    root: Option<PathBuf>,
    opts: SamplingOptions,
    cache: Mutex<HashMap<String, Arc<DatabaseCatalog>>>,
}

impl CatalogStore {
    pub fn new(root: impl Into<PathBuf>, opts: SamplingOptions) -> Self {
        Self {
            root: Some(root.into()),
            opts,
            cache: Mutex::new(HashMap::new()),
        }
    }

    /// A store holding only the given catalogs.
    pub fn from_catalogs(catalogs: impl IntoIterator<Item = DatabaseCatalog>) -> Self {
        let cache = catalogs
            .into_iter()
            .map(|c| (c.db_id.clone(), Arc::new(c)))
            .collect();
        Self {
            root: None,
            opts: SamplingOptions::default(),
            cache: Mutex::new(cache),
        }
    }

    pub fn db_path(&self, db_id: &str) -> Option<PathBuf> {
        if let Some(c) = self.cache.lock().unwrap().get(db_id) {
            return Some(c.source_path.clone());
        }
        let root = self.root.as_ref()?;
        let dir = root.join(db_id);
        ["sqlite", "db", "sqlite3"]
            .iter()
            .map(|ext| dir.join(format!("{db_id}.{ext}")))
            .find(|p| p.is_file())
    }

    pub fn get(&self, db_id: &str) -> Result<Arc<DatabaseCatalog>, CatalogError> {
        if let Some(c) = self.cache.lock().unwrap().get(db_id) {
            return Ok(Arc::clone(c));
        }
        let path = self
            .db_path(db_id)
            .ok_or_else(|| CatalogError::UnknownDatabase(db_id.to_string()))?;
        let mut catalog = introspect(&path, &self.opts)?;
        catalog.db_id = db_id.to_string();
        if let Some(dir) = path.parent() {
            catalog = attach_descriptions(catalog, &dir.join("database_description"));
        }
        let catalog = Arc::new(catalog);
        self.cache
            .lock()
            .unwrap()
            .entry(db_id.to_string())
            .or_insert_with(|| Arc::clone(&catalog));
        Ok(catalog)
    }
}
