//! Small synthetic databases and a 20-question benchmark over them.
//!
//! Used by the examples and the integration tests. Everything here is
//! deterministic: the same directory contents on every call.

use std::path::{Path, PathBuf};

use rusqlite::Connection;

use crate::catalog::{CatalogStore, SamplingOptions};
use crate::llm::stub::OracleBackend;
use crate::pipeline::Task;

const SCHOOL: &str = "
CREATE TABLE schools (
    id INTEGER PRIMARY KEY,
    name TEXT NOT NULL,
    city TEXT,
    founded INTEGER
);
CREATE TABLE students (
    id INTEGER PRIMARY KEY,
    school_id INTEGER REFERENCES schools(id),
    name TEXT,
    grade INTEGER,
    gpa REAL
);
CREATE TABLE scores (
    student_id INTEGER REFERENCES students(id),
    subject TEXT,
    score INTEGER,
    PRIMARY KEY (student_id, subject)
);
INSERT INTO schools VALUES
    (1, 'Hillcrest High', 'Springfield', 1962),
    (2, 'Riverside Academy', 'Shelbyville', 1988),
    (3, 'Oakwood School', 'Springfield', 2004);
INSERT INTO students VALUES
    (1, 1, 'Ada', 10, 3.9),
    (2, 1, 'Ben', 11, 3.1),
    (3, 1, 'Cleo', 12, 3.5),
    (4, 2, 'Dev', 10, 2.8),
    (5, 2, 'Eve', 11, 3.7),
    (6, 3, 'Finn', 12, 3.2),
    (7, 3, 'Gus', 9, NULL);
INSERT INTO scores VALUES
    (1, 'math', 98), (1, 'reading', 91),
    (2, 'math', 72), (2, 'reading', 85),
    (3, 'math', 88), (4, 'math', 64),
    (5, 'reading', 95), (6, 'math', 79),
    (6, 'reading', 70);
";

const SCHOOL_DESCRIPTIONS: &[(&str, &str)] = &[
    (
        "schools",
        "original_column_name,column_name,column_description,value_description\n\
         id,,unique school identifier,\n\
         founded,,year the school opened,\n",
    ),
    (
        "students",
        "original_column_name,column_name,column_description,value_description\n\
         gpa,,grade point average on a 4.0 scale,NULL when not yet graded\n\
         grade,,school year from 9 to 12,\n",
    ),
];

const RETAIL: &str = "
CREATE TABLE customers (
    id INTEGER PRIMARY KEY,
    name TEXT,
    country TEXT
);
CREATE TABLE products (
    id INTEGER PRIMARY KEY,
    title TEXT,
    category TEXT,
    price REAL
);
CREATE TABLE orders (
    id INTEGER PRIMARY KEY,
    customer_id INTEGER REFERENCES customers(id),
    product_id INTEGER REFERENCES products(id),
    quantity INTEGER,
    order_date TEXT
);
INSERT INTO customers VALUES
    (1, 'Acme Corp', 'US'),
    (2, 'Blue Fjord', 'NO'),
    (3, 'Citrus Ltd', 'UK'),
    (4, 'Delta Foods', 'US');
INSERT INTO products VALUES
    (1, 'Widget', 'tools', 2.5),
    (2, 'Gadget', 'tools', 12.0),
    (3, 'Tea Box', 'food', 7.25),
    (4, 'Coffee Tin', 'food', 9.75),
    (5, 'Lamp', 'home', 30.0);
INSERT INTO orders VALUES
    (1, 1, 1, 10, '2024-01-05'),
    (2, 1, 2, 1, '2024-01-20'),
    (3, 2, 3, 4, '2024-02-02'),
    (4, 3, 4, 2, '2024-02-14'),
    (5, 3, 3, 6, '2024-03-01'),
    (6, 4, 5, 1, '2024-03-09'),
    (7, 1, 5, 2, '2024-03-30');
";

const FLIGHTS: &str = "
CREATE TABLE airports (
    code TEXT PRIMARY KEY,
    city TEXT,
    country TEXT
);
CREATE TABLE airlines (
    name TEXT PRIMARY KEY,
    founded INTEGER
);
CREATE TABLE routes (
    id INTEGER PRIMARY KEY,
    airline TEXT REFERENCES airlines(name),
    origin TEXT REFERENCES airports(code),
    destination TEXT REFERENCES airports(code),
    distance INTEGER
);
INSERT INTO airports VALUES
    ('OSL', 'Oslo', 'Norway'),
    ('BGO', 'Bergen', 'Norway'),
    ('LHR', 'London', 'UK'),
    ('JFK', 'New York', 'US'),
    ('SFO', 'San Francisco', 'US');
INSERT INTO airlines VALUES
    ('Nordic Air', 1993),
    ('Atlantic Way', 1971),
    ('Coastal', 2009);
INSERT INTO routes VALUES
    (1, 'Nordic Air', 'OSL', 'BGO', 305),
    (2, 'Nordic Air', 'OSL', 'LHR', 1155),
    (3, 'Atlantic Way', 'LHR', 'JFK', 5540),
    (4, 'Atlantic Way', 'JFK', 'SFO', 4150),
    (5, 'Coastal', 'SFO', 'JFK', 4150),
    (6, 'Coastal', 'BGO', 'OSL', 305);
";

pub const DB_IDS: [&str; 3] = ["school", "retail", "flights"];

/// `(db_id, question, evidence, gold SQL, difficulty)`.
const QUESTIONS: &[(&str, &str, &str, &str, &str)] = &[
    ("school", "How many schools are there?", "", "SELECT COUNT(*) FROM schools", "simple"),
    ("school", "List the names of schools in Springfield.", "", "SELECT name FROM schools WHERE city = 'Springfield'", "simple"),
    ("school", "What is the highest GPA among all students?", "GPA refers to gpa", "SELECT MAX(gpa) FROM students", "simple"),
    ("school", "Which students attend Hillcrest High?", "", "SELECT s.name FROM students AS s JOIN schools AS c ON s.school_id = c.id WHERE c.name = 'Hillcrest High'", "moderate"),
    ("school", "What is the average math score?", "math refers to subject = 'math'", "SELECT AVG(score) FROM scores WHERE subject = 'math'", "simple"),
    ("school", "Name the student with the best reading score.", "reading refers to subject = 'reading'", "SELECT st.name FROM scores AS sc JOIN students AS st ON sc.student_id = st.id WHERE sc.subject = 'reading' ORDER BY sc.score DESC LIMIT 1", "moderate"),
    ("school", "For each school founded before 2000, how many students does it have?", "founded before 2000 refers to founded < 2000", "SELECT c.name, COUNT(s.id) FROM schools AS c JOIN students AS s ON s.school_id = c.id WHERE c.founded < 2000 GROUP BY c.id", "challenging"),
    ("retail", "How many customers are based in the US?", "US refers to country = 'US'", "SELECT COUNT(*) FROM customers WHERE country = 'US'", "simple"),
    ("retail", "What is the most expensive product?", "", "SELECT title FROM products ORDER BY price DESC LIMIT 1", "simple"),
    ("retail", "List the product categories.", "", "SELECT DISTINCT category FROM products", "simple"),
    ("retail", "What is the total quantity ordered by Acme Corp?", "", "SELECT SUM(o.quantity) FROM orders AS o JOIN customers AS c ON o.customer_id = c.id WHERE c.name = 'Acme Corp'", "moderate"),
    ("retail", "Which customers bought food products?", "food products refers to category = 'food'", "SELECT DISTINCT c.name FROM customers AS c JOIN orders AS o ON o.customer_id = c.id JOIN products AS p ON o.product_id = p.id WHERE p.category = 'food'", "challenging"),
    ("retail", "How many orders were placed in March 2024?", "March 2024 refers to order_date LIKE '2024-03%'", "SELECT COUNT(*) FROM orders WHERE order_date LIKE '2024-03%'", "moderate"),
    ("retail", "What is the revenue of each category?", "revenue = SUM(price * quantity)", "SELECT p.category, SUM(p.price * o.quantity) FROM orders AS o JOIN products AS p ON o.product_id = p.id GROUP BY p.category", "challenging"),
    ("flights", "How many airports are in Norway?", "", "SELECT COUNT(*) FROM airports WHERE country = 'Norway'", "simple"),
    ("flights", "Which airline was founded first?", "", "SELECT name FROM airlines ORDER BY founded ASC LIMIT 1", "simple"),
    ("flights", "What is the longest route distance?", "", "SELECT MAX(distance) FROM routes", "simple"),
    ("flights", "List the cities reachable from Oslo.", "Oslo refers to city = 'Oslo'", "SELECT a2.city FROM routes AS r JOIN airports AS a1 ON r.origin = a1.code JOIN airports AS a2 ON r.destination = a2.code WHERE a1.city = 'Oslo'", "moderate"),
    ("flights", "How many routes does each airline operate?", "", "SELECT airline, COUNT(*) FROM routes GROUP BY airline", "moderate"),
    ("flights", "Which airlines fly routes longer than 4000 that were founded after 1980?", "longer than 4000 refers to distance > 4000", "SELECT DISTINCT l.name FROM routes AS r JOIN airlines AS l ON r.airline = l.name WHERE r.distance > 4000 AND l.founded > 1980", "challenging"),
];

/// The 20 benchmark questions, with gold SQL and difficulty.
pub fn tasks() -> Vec<Task> {
    QUESTIONS
        .iter()
        .enumerate()
        .map(|(i, (db, q, ev, sql, diff))| Task {
            question_id: i.to_string(),
            db_id: db.to_string(),
            question: q.to_string(),
            evidence: (!ev.is_empty()).then(|| ev.to_string()),
            gold_sql: Some(sql.to_string()),
            difficulty: Some(diff.to_string()),
        })
        .collect()
}

fn create_db(dir: &Path, db_id: &str, script: &str) -> std::io::Result<PathBuf> {
    let db_dir = dir.join(db_id);
    std::fs::create_dir_all(&db_dir)?;
    let path = db_dir.join(format!("{db_id}.sqlite"));
    if path.exists() {
        std::fs::remove_file(&path)?;
    }
    Connection::open(&path)
        .and_then(|conn| conn.execute_batch(script))
        .map_err(std::io::Error::other)?;
    Ok(path)
}

/// A BIRD-layout database root holding the three demo databases.
#[derive(Debug, Clone)]
pub struct Demo {
    pub root: PathBuf,
    pub tasks: Vec<Task>,
}

impl Demo {
    /// Write the databases (and description CSVs) under `root`, replacing
    /// any earlier copy.
    pub fn create(root: &Path) -> std::io::Result<Self> {
        for (id, script) in DB_IDS.iter().zip([SCHOOL, RETAIL, FLIGHTS]) {
            create_db(root, id, script)?;
        }
        let desc = root.join("school").join("database_description");
        std::fs::create_dir_all(&desc)?;
        for (table, csv) in SCHOOL_DESCRIPTIONS {
            std::fs::write(desc.join(format!("{table}.csv")), csv)?;
        }
        Ok(Self {
            root: root.to_path_buf(),
            tasks: tasks(),
        })
    }

    pub fn store(&self) -> CatalogStore {
        CatalogStore::new(&self.root, SamplingOptions::default())
    }

    pub fn db_path(&self, db_id: &str) -> PathBuf {
        self.root.join(db_id).join(format!("{db_id}.sqlite"))
    }

    /// Write the questions as a BIRD-format JSON file.
    pub fn write_benchmark(&self, path: &Path) -> std::io::Result<()> {
        let rows: Vec<serde_json::Value> = self
            .tasks
            .iter()
            .map(|t| {
                serde_json::json!({
                    "question_id": t.question_id.parse::<u64>().unwrap_or_default(),
                    "db_id": t.db_id,
                    "question": t.question,
                    "evidence": t.evidence,
                    "SQL": t.gold_sql,
                    "difficulty": t.difficulty,
                })
            })
            .collect();
        std::fs::write(path, serde_json::to_string_pretty(&rows)? + "\n")
    }

    /// Backend answering every stage with each question's gold SQL.
    pub fn oracle(&self) -> OracleBackend {
        oracle_for(&self.tasks)
    }
}

pub fn oracle_for(tasks: &[Task]) -> OracleBackend {
    OracleBackend::new(
        tasks
            .iter()
            .map(|t| (t.question.clone(), t.gold_sql.clone().unwrap_or_default())),
    )
}
