//! Prompt templates for the four stages.
//!
//! Each builder fills its template in a single pass, so placeholder-like
//! text inside a question or a SQL string is never re-substituted.

fn header(schema: &str, instruction: &str, question: &str, evidence: &str) -> String {
    let schema = schema.trim_end();
    format!(
        "{schema}\n\n-- {instruction}\n\nQuestion: {question}\n-- External Knowledge: {evidence}\n\n"
    )
}

pub fn linking(schema: &str, question: &str, evidence: &str) -> String {
    let mut p = header(
        schema,
        "Given the previous table schema combined with the additional information provided, \
         help me find all the table names associated with answering the user's question.",
        question,
        evidence,
    );
    p.push_str(
        "Remember not to generate SQL, but reply with the relevant table names. \
         Please reply in JSON format:\n\
         ```json\n\
         {\n    \"tables\": [\"table1\",\"table2\",..]\n}\n\
         ```\n",
    );
    p
}

pub fn generation(schema: &str, question: &str, evidence: &str) -> String {
    let mut p = header(
        schema,
        "Using valid SQLite and understanding External Knowledge, answer the following \
         questions for the tables provided above.",
        question,
        evidence,
    );
    p.push_str("Please output only the final SQL query, starts with keyword `SELECT`.\n");
    p
}

pub fn revision(
    schema: &str,
    question: &str,
    evidence: &str,
    predicted_sql: &str,
    execute_result: &str,
) -> String {
    let mut p = header(
        schema,
        "Using valid SQLite and understanding External Knowledge, revise the SQL query that \
         answers the following questions of the above table schema based on the predicted SQL \
         and SQL execution results. If the current SQL query is correct, return the query \
         directly.",
        question,
        evidence,
    );
    p.push_str(&format!(
        "Predicted SQL query: {predicted_sql}\nSQL execute result: {execute_result}\n\n\
         Please output only the final revised SQL query, starts with keyword `SELECT`.\n"
    ));
    p
}

pub fn merge(
    schema: &str,
    question: &str,
    evidence: &str,
    first: (&str, &str),
    second: (&str, &str),
) -> String {
    let mut p = header(
        schema,
        "Using valid SQLite and understanding External Knowledge, answer the following \
         questions for the tables provided above.",
        question,
        evidence,
    );
    p.push_str(&format!(
        "Here are some corresponding draft SQL and execute result:\n\
         1. {}\nExecution result\n{}\n\n\
         2. {}\nExecution result\n{}\n\n\
         Please output only the final SQL query, starts with keyword `SELECT`.\n",
        first.0, first.1, second.0, second.1
    ));
    p
}
