//! SQL extraction from model output and table/column resolution against a
//! catalog.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};
use sqlparser::ast::{Expr, ObjectName, Query, TableFactor, Visit, Visitor};
use sqlparser::dialect::SQLiteDialect;
use sqlparser::parser::Parser;
use thiserror::Error;

use crate::catalog::DatabaseCatalog;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("no SQL found in model output")]
pub struct NoSqlFound;

/// Pull the SQL statement out of a raw model response.
///
/// The last fenced code block holding a `SELECT`/`WITH` keyword wins;
/// otherwise the whole text is searched. The statement starts at the first
/// standalone keyword, and prose after a terminating semicolon is dropped.
pub fn extract_sql(raw: &str) -> Result<String, NoSqlFound> {
    let body = fenced_blocks(raw)
        .into_iter()
        .rev()
        .find(|b| sql_start(b).is_some())
        .unwrap_or(raw);
    let start = sql_start(body).ok_or(NoSqlFound)?;
    let sql = strip_after_semicolon(&body[start..]).trim();
    if sql.is_empty() {
        return Err(NoSqlFound);
    }
    Ok(sql.to_string())
}

fn sql_start(text: &str) -> Option<usize> {
    find_keyword(text, "SELECT")
        .into_iter()
        .chain(find_keyword(text, "WITH"))
        .min()
}

fn fenced_blocks(raw: &str) -> Vec<&str> {
    let mut blocks = Vec::new();
    let mut rest = raw;
    while let Some(open) = rest.find("```") {
        let after_open = open + 3;
        let Some(close) = rest[after_open..].find("```") else {
            break;
        };
        blocks.push(&rest[after_open..after_open + close]);
        rest = &rest[after_open + close + 3..];
    }
    blocks
}

fn is_ident_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

/// Byte offset of the first case-insensitive standalone occurrence of `word`.
fn find_keyword(text: &str, word: &str) -> Option<usize> {
    let hay = text.as_bytes();
    let needle = word.as_bytes();
    if hay.len() < needle.len() {
        return None;
    }
    (0..=hay.len() - needle.len()).find(|&i| {
        hay[i..i + needle.len()].eq_ignore_ascii_case(needle)
            && (i == 0 || !is_ident_byte(hay[i - 1]))
            && hay.get(i + needle.len()).is_none_or(|&b| !is_ident_byte(b))
    })
}

/// Cut at the first semicolon that is outside quotes, keeping it.
fn strip_after_semicolon(sql: &str) -> &str {
    let mut quote: Option<char> = None;
    for (i, c) in sql.char_indices() {
        match quote {
            Some(q) if c == q => quote = None,
            Some(_) => {}
            None => match c {
                '\'' | '"' | '`' => quote = Some(c),
                '[' => quote = Some(']'),
                ';' => return &sql[..=i],
                _ => {}
            },
        }
    }
    sql
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SqlIdentifiers {
    /// Catalog spellings of referenced tables.
    pub tables: BTreeSet<String>,
    /// `(table, column)`; table is `None` when it could not be resolved.
    pub columns: BTreeSet<(Option<String>, String)>,
    pub parse_ok: bool,
}

#[derive(Default)]
struct Collector {
    cte_names: HashSet<String>,
    /// (table name, alias)
    relations: Vec<(String, Option<String>)>,
    /// (qualifier, column)
    column_refs: Vec<(Option<String>, String)>,
}

fn last_ident(name: &ObjectName) -> Option<String> {
    name.0
        .last()
        .and_then(|p| p.as_ident())
        .map(|i| i.value.clone())
}

impl Visitor for Collector {
    type Break = ();

    fn pre_visit_query(&mut self, query: &Query) -> ControlFlow<()> {
        if let Some(with) = &query.with {
            for cte in &with.cte_tables {
                self.cte_names.insert(cte.alias.name.value.to_lowercase());
            }
        }
        ControlFlow::Continue(())
    }

    fn pre_visit_table_factor(&mut self, factor: &TableFactor) -> ControlFlow<()> {
        if let TableFactor::Table { name, alias, .. } = factor {
            if let Some(table) = last_ident(name) {
                self.relations
                    .push((table, alias.as_ref().map(|a| a.name.value.clone())));
            }
        }
        ControlFlow::Continue(())
    }

    fn pre_visit_expr(&mut self, expr: &Expr) -> ControlFlow<()> {
        match expr {
            Expr::Identifier(ident) => self.column_refs.push((None, ident.value.clone())),
            Expr::CompoundIdentifier(parts) if parts.len() >= 2 => {
                let n = parts.len();
                self.column_refs.push((
                    Some(parts[n - 2].value.clone()),
                    parts[n - 1].value.clone(),
                ));
            }
            _ => {}
        }
        ControlFlow::Continue(())
    }
}

/// Parse `sql` and resolve the tables and columns it references.
pub fn referenced_objects(sql: &str, catalog: &DatabaseCatalog) -> SqlIdentifiers {
    let statements = match Parser::parse_sql(&SQLiteDialect {}, sql) {
        Ok(s) if !s.is_empty() => s,
        _ => return SqlIdentifiers::default(),
    };
    let mut collector = Collector::default();
    for stmt in &statements {
        let _ = stmt.visit(&mut collector);
    }

    let mut out = SqlIdentifiers {
        parse_ok: true,
        ..Default::default()
    };
    // qualifier (lowercased) -> catalog table name
    let mut scope: HashMap<String, String> = HashMap::new();
    for (name, alias) in &collector.relations {
        if collector.cte_names.contains(&name.to_lowercase()) {
            continue;
        }
        if let Some(canonical) = catalog.canonical_table_name(name) {
            out.tables.insert(canonical.to_string());
            scope.insert(name.to_lowercase(), canonical.to_string());
            if let Some(alias) = alias {
                scope.insert(alias.to_lowercase(), canonical.to_string());
            }
        }
    }

    for (qualifier, column) in collector.column_refs {
        let resolved = match &qualifier {
            Some(q) => scope.get(&q.to_lowercase()).cloned(),
            None => {
                let owners: Vec<&String> = out
                    .tables
                    .iter()
                    .filter(|t| {
                        catalog
                            .table(t)
                            .is_some_and(|info| info.column(&column).is_some())
                    })
                    .collect();
                (owners.len() == 1).then(|| owners[0].clone())
            }
        };
        let column = resolved
            .as_deref()
            .and_then(|t| catalog.table(t))
            .and_then(|t| t.column(&column))
            .map(|c| c.name.clone())
            .unwrap_or(column);
        out.columns.insert((resolved, column));
    }
    out
}

/// Tables referenced by `sql`; falls back to a lexical scan for catalog
/// table names when the statement does not parse.
pub fn tables_only(sql: &str, catalog: &DatabaseCatalog) -> BTreeSet<String> {
    let parsed = referenced_objects(sql, catalog);
    if parsed.parse_ok {
        return parsed.tables;
    }
    lexical_tables(sql, catalog)
}

/// Catalog tables whose name occurs in `text` as a standalone token.
pub fn lexical_tables(text: &str, catalog: &DatabaseCatalog) -> BTreeSet<String> {
    catalog
        .tables
        .iter()
        .filter(|t| find_keyword(text, &t.name).is_some())
        .map(|t| t.name.clone())
        .collect()
}
