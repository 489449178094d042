//! Prompt templates for the transform and filter LLM calls, plus response
//! scanning helpers.

use crate::ingest::RowRecord;
use crate::retrieval::TaskSpec;
use crate::util::balanced_json_objects;

/// Literal anchor ending every transform prompt.
pub const TRANSFORM_ANCHOR: &str = "Response (JSON ONLY):";

/// Literal anchor ending every filter prompt.
pub const FILTER_ANCHOR: &str = "Response (Yes or No):";

/// Extra line appended to the example block in CoT mode.
pub const COT_EXAMPLE_NOTE: &str =
    "The \"output\" field must contain detailed step-by-step reasoning that ends with the final answer.";

fn examples_block(task: &TaskSpec, cot: bool) -> String {
    let mut lines: Vec<String> = task
        .examples
        .iter()
        .map(|ex| {
            serde_json::json!({ "input": ex.query, "output": ex.answer }).to_string()
        })
        .collect();
    if cot {
        lines.push(COT_EXAMPLE_NOTE.to_string());
    }
    lines.join("\n")
}

/// Renders the transform prompt: the task instruction, every few-shot
/// example as an input/output object, and the full row as a flat object —
/// all columns included, so deciding which fields matter is delegated to the
/// LLM. Ends with [`TRANSFORM_ANCHOR`].
pub fn render_transform_prompt(task: &TaskSpec, row: &RowRecord, cot: bool) -> String {
    let row_json = serde_json::to_string(&row.columns).expect("columns serialize");
    format!(
        "I would like you to create questions for a test. The directions for the test are:\n\
         '''\n\
         {instruction}\n\
         '''\n\
         The format should be in json like this:\n\
         {examples}\n\
         Now I will provide you with a JSON file from a different dataset. Please create a question where the format and type of question is similar to the examples provided above, but the content is inspired by the example provided below.\n\
         You need to decide which part of the dataset to use.\n\
         {row_json}\n\
         Your response MUST be a JSON with exactly 2 fields: \"input\" and \"output\".\n\
         {TRANSFORM_ANCHOR}",
        instruction = task.instruction,
        examples = examples_block(task, cot),
    )
}

/// Renders the yes/no filter prompt for one candidate example. Ends with
/// [`FILTER_ANCHOR`].
pub fn render_filter_prompt(task: &TaskSpec, input: &str, output: &str) -> String {
    let input_json = serde_json::to_string(input).expect("string serializes");
    let output_json = serde_json::to_string(output).expect("string serializes");
    format!(
        "You will be given a task description. Your task is to determine whether a data is fitful for this task.\n\
         # Instruction:\n\
         {instruction}\n\
         # Fitful Examples that meet the task's request:\n\
         {examples}\n\
         Now, there is a new data. Your task is to determine whether this data is fitful for this task.\n\
         New Data:\n\
         {{\n\
         \"input\": {input_json},\n\
         \"output\": {output_json},\n\
         }}\n\
         {FILTER_ANCHOR}",
        instruction = task.instruction,
        examples = examples_block(task, false),
    )
}

/// First balanced `{...}` block in an LLM response, tolerating leading and
/// trailing prose.
pub fn first_json_object(text: &str) -> Option<&str> {
    balanced_json_objects(text).into_iter().next()
}

/// First alphabetic token, lowercased: `"yes"` → `Some(true)`,
/// `"no"` → `Some(false)`, anything else → `None`.
pub fn parse_yes_no(text: &str) -> Option<bool> {
    let first_word: String = text
        .chars()
        .skip_while(|c| !c.is_alphabetic())
        .take_while(|c| c.is_alphabetic())
        .collect::<String>()
        .to_lowercase();
    match first_word.as_str() {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::FewShotExample;
    use indexmap::IndexMap;

    fn sample_task() -> TaskSpec {
        TaskSpec {
            instruction: "Answer arithmetic questions.".into(),
            examples: vec![FewShotExample {
                query: "1+1?".into(),
                answer: "2".into(),
            }],
            exclusions: vec![],
            n: 5,
        }
    }

    fn sample_row() -> RowRecord {
        let mut columns = IndexMap::new();
        columns.insert("q".to_string(), "2+2?".to_string());
        columns.insert("a".to_string(), "4".to_string());
        RowRecord {
            dataset_id: "arith".into(),
            config_name: "".into(),
            row_num: 0,
            columns,
        }
    }

    #[test]
    fn prompt_contains_instruction_and_row_verbatim() {
        let prompt = render_transform_prompt(&sample_task(), &sample_row(), false);
        assert!(prompt.contains("Answer arithmetic questions."));
        assert!(prompt.contains(r#"{"q":"2+2?","a":"4"}"#));
        assert!(prompt.contains(r#"{"input":"1+1?","output":"2"}"#));
    }

    #[test]
    fn prompt_ends_with_json_anchor() {
        let prompt = render_transform_prompt(&sample_task(), &sample_row(), true);
        assert!(prompt.ends_with(TRANSFORM_ANCHOR));
    }

    #[test]
    fn cot_changes_only_the_example_block() {
        let plain = render_transform_prompt(&sample_task(), &sample_row(), false);
        let cot = render_transform_prompt(&sample_task(), &sample_row(), true);
        assert_ne!(plain, cot);
        let expected = plain.replace(
            "{\"input\":\"1+1?\",\"output\":\"2\"}\n",
            &format!("{{\"input\":\"1+1?\",\"output\":\"2\"}}\n{COT_EXAMPLE_NOTE}\n"),
        );
        assert_eq!(cot, expected);
    }

    #[test]
    fn filter_prompt_ends_with_yes_no_anchor() {
        let prompt = render_filter_prompt(&sample_task(), "in", "out");
        assert!(prompt.ends_with(FILTER_ANCHOR));
        assert!(prompt.contains("\"input\": \"in\""));
    }

    #[test]
    fn yes_no_parsing_takes_leading_token() {
        assert_eq!(parse_yes_no("Yes"), Some(true));
        assert_eq!(parse_yes_no("  yes, this fits"), Some(true));
        assert_eq!(parse_yes_no("No, because it is noise"), Some(false));
        assert_eq!(parse_yes_no("NO"), Some(false));
        assert_eq!(parse_yes_no("maybe"), None);
        assert_eq!(parse_yes_no(""), None);
        assert_eq!(parse_yes_no("\"Yes\""), Some(true));
    }

    #[test]
    fn first_object_skips_prose() {
        let text = "Sure thing!\n{\"input\":\"x\",\"output\":\"y\"}\nHope that helps.";
        assert_eq!(
            first_json_object(text),
            Some("{\"input\":\"x\",\"output\":\"y\"}")
        );
    }
}
