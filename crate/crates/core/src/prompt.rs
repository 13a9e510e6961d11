//! Code-style prompt rendering.
//!
//! A prompt is a task-definition header (one class per domain), the
//! in-context examples, and the query. Each example renders as three lines:
//!
//! ```text
//! state = {"hotel_area": "east"}
//! print("agent: which area?", "user: same area as my hotel please")
//! state.restaurant = update_restaurant(area=state.hotel.area)
//! ```
//!
//! Parts are separated by one blank line, and no rendered example contains
//! a blank line itself, so `"\n\n"` works as a stop sequence.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::Example;
use crate::schema::{CanonicalSchema, ValueKind};
use crate::state::{DialogueState, SlotName, SlotValue, StateChange, TurnContext};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    /// Ends exactly where the update line of the query begins.
    pub main_prompt: String,
    /// Ends exactly where a bare candidate update line is appended for scoring.
    pub inverted_prefix: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RenderedExample {
    pub state_line: String,
    pub print_line: String,
    pub update_line: String,
}

impl RenderedExample {
    pub fn text(&self) -> String {
        format!("{}\n{}\n{}", self.state_line, self.print_line, self.update_line)
    }

    pub fn inverted_text(&self) -> String {
        format!("{}\n{}\n{}", self.update_line, self.state_line, self.print_line)
    }
}

/// Double-quoted string literal; newlines are escaped so a rendered line
/// never spans more than one line.
pub fn quote(text: &str) -> String {
    let mut out = String::with_capacity(text.len() + 2);
    out.push('"');
    for c in text.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '"' => out.push_str("\\\""),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn class_name(domain: &str) -> String {
    let mut chars = domain.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn type_hint(kind: ValueKind) -> &'static str {
    match kind {
        ValueKind::Text => "str",
        ValueKind::Time => "Time",
        ValueKind::Boolean => "bool",
        ValueKind::Integer => "int",
        ValueKind::Location => "Location",
    }
}

/// One class per domain with an attribute per slot; categorical slots list
/// their values, the rest carry a type. Ends with the state class holding
/// one attribute per domain. Empty for an empty schema.
pub fn render_task_definition(schema: &CanonicalSchema) -> String {
    if schema.domains.is_empty() {
        return String::new();
    }
    let mut blocks = Vec::with_capacity(schema.domains.len() + 1);
    for d in &schema.domains {
        let mut block = format!("class {}:", class_name(&d.name));
        for s in &d.slots {
            let hint = match (&s.allowed_values, s.categorical) {
                (Some(values), true) => {
                    let vs: Vec<String> = values.iter().map(|v| quote(v)).collect();
                    format!("Literal[{}]", vs.join(", "))
                }
                _ => type_hint(s.value_kind).to_string(),
            };
            block.push_str(&format!("\n    {}: {}", s.name, hint));
        }
        blocks.push(block);
    }
    let mut state = String::from("class DialogueState:");
    for d in &schema.domains {
        state.push_str(&format!("\n    {}: {}", d.name, class_name(&d.name)));
    }
    blocks.push(state);
    blocks.join("\n\n")
}

pub fn render_state_line(state: &DialogueState) -> String {
    let entries: Vec<String> = state
        .iter()
        .map(|(slot, value)| {
            format!(
                "{}: {}",
                quote(&format!("{}_{}", slot.domain(), slot.slot())),
                quote(value)
            )
        })
        .collect();
    format!("state = {{{}}}", entries.join(", "))
}

pub fn render_print_line(agent: &str, user: &str) -> String {
    if agent.is_empty() {
        format!("print({})", quote(&format!("user: {user}")))
    } else {
        format!(
            "print({}, {})",
            quote(&format!("agent: {agent}")),
            quote(&format!("user: {user}"))
        )
    }
}

fn render_value(value: Option<&SlotValue>) -> String {
    match value {
        None => "None".to_string(),
        Some(SlotValue::Literal(t)) => quote(t),
        Some(SlotValue::DontCare) => quote(crate::state::DONTCARE),
        Some(SlotValue::Reference(target)) => {
            format!("state.{}.{}", target.domain(), target.slot())
        }
    }
}

/// The update line for a delta: one call per touched domain in domain
/// order, keyword arguments sorted by slot, removals as `None`, and `pass`
/// when nothing changes.
pub fn canonicalize_completion(delta: &StateChange) -> String {
    if delta.is_empty() {
        return "pass".to_string();
    }
    let mut by_domain: BTreeMap<&str, Vec<&SlotName>> = BTreeMap::new();
    for slot in delta.touched() {
        by_domain.entry(slot.domain()).or_default().push(slot);
    }
    let calls: Vec<String> = by_domain
        .into_iter()
        .map(|(domain, slots)| {
            let args: Vec<String> = slots
                .into_iter()
                .map(|s| format!("{}={}", s.slot(), render_value(delta.updates().get(s))))
                .collect();
            format!("state.{domain} = update_{domain}({})", args.join(", "))
        })
        .collect();
    calls.join("; ")
}

pub fn render_example(e: &Example) -> RenderedExample {
    RenderedExample {
        state_line: render_state_line(&e.context.prev_state),
        print_line: render_print_line(&e.context.agent_utt, &e.context.user_utt),
        update_line: canonicalize_completion(&e.delta),
    }
}

/// Fixed demonstration used when no examples are retrieved.
pub fn formatting_example() -> Example {
    let slot = |s: &str| s.parse::<SlotName>().expect("static slot name");
    Example {
        id: "formatting-example".to_string(),
        context: TurnContext {
            prev_state: DialogueState::new(),
            agent_utt: String::new(),
            user_utt: "i am looking for a cheap place to stay in the north with free parking"
                .to_string(),
        },
        delta: StateChange::new()
            .with(slot("hotel-area"), SlotValue::Literal("north".into()))
            .with(slot("hotel-parking"), SlotValue::Literal("yes".into()))
            .with(slot("hotel-pricerange"), SlotValue::Literal("cheap".into())),
    }
}

fn demonstrations<'a>(examples: &[&'a Example], fallback: &'a Example) -> Vec<&'a Example> {
    if examples.is_empty() {
        vec![fallback]
    } else {
        // most relevant (first selected) sits next to the query
        examples.iter().rev().copied().collect()
    }
}

/// Main prompt. `examples` are in selection order; an empty slice means
/// zero-shot, where the fixed formatting example is shown instead.
pub fn build_prompt(schema: &CanonicalSchema, examples: &[&Example], query: &TurnContext) -> String {
    let fallback = formatting_example();
    let mut parts = Vec::new();
    let header = render_task_definition(schema);
    if !header.is_empty() {
        parts.push(header);
    }
    for e in demonstrations(examples, &fallback) {
        parts.push(render_example(e).text());
    }
    parts.push(format!(
        "{}\n{}",
        render_state_line(&query.prev_state),
        render_print_line(&query.agent_utt, &query.user_utt)
    ));
    let mut prompt = parts.join("\n\n");
    prompt.push('\n');
    prompt
}

/// Inverted prompt: each example shows its update line before its inputs.
/// A candidate update line appended to this text is scored without the query.
pub fn build_inverted_prompt(schema: &CanonicalSchema, examples: &[&Example]) -> String {
    let fallback = formatting_example();
    let mut parts = Vec::new();
    let header = render_task_definition(schema);
    if !header.is_empty() {
        parts.push(header);
    }
    for e in demonstrations(examples, &fallback) {
        parts.push(render_example(e).inverted_text());
    }
    let mut prompt = parts.join("\n\n");
    prompt.push_str("\n\n");
    prompt
}

pub fn build_prompt_bundle(
    schema: &CanonicalSchema,
    examples: &[&Example],
    query: &TurnContext,
) -> PromptBundle {
    PromptBundle {
        main_prompt: build_prompt(schema, examples, query),
        inverted_prefix: build_inverted_prompt(schema, examples),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::{parse_completion, ParseOutcome};

    fn schema() -> CanonicalSchema {
        CanonicalSchema::from_json(
            r#"{"domains":[
            {"name":"hotel","slots":[{"name":"area","categorical":true,"values":["centre","east","north","south","west"],"kind":"text"},
                                     {"name":"stars","kind":"integer"},{"name":"parking","categorical":true,"values":["yes","no"],"kind":"boolean"},
                                     {"name":"name","kind":"text"}]},
            {"name":"restaurant","slots":[{"name":"area","categorical":true,"values":["centre","east","north","south","west"],"kind":"text"}]}]}"#,
        )
        .unwrap()
    }

    fn sn(s: &str) -> SlotName {
        s.parse().unwrap()
    }

    fn example(delta: StateChange) -> Example {
        Example {
            id: "e".into(),
            context: TurnContext {
                prev_state: [(sn("hotel-area"), "east".to_string())].into_iter().collect(),
                agent_utt: "anything else?".into(),
                user_utt: "a restaurant in the same area as my hotel".into(),
            },
            delta,
        }
    }

    #[test]
    fn header_lists_categorical_values() {
        let header = render_task_definition(&schema());
        assert!(header.starts_with("class Hotel:\n    area: Literal[\"centre\", \"east\", \"north\", \"south\", \"west\"]\n    stars: int\n"));
        assert!(header.ends_with("class DialogueState:\n    hotel: Hotel\n    restaurant: Restaurant"));
        assert_eq!(render_task_definition(&CanonicalSchema::default()), "");
        assert_eq!(header, render_task_definition(&schema()));
    }

    #[test]
    fn reference_renders_as_attribute_access() {
        let e = example(
            StateChange::new().with(sn("restaurant-area"), SlotValue::Reference(sn("hotel-area"))),
        );
        let r = render_example(&e);
        assert_eq!(r.state_line, r#"state = {"hotel_area": "east"}"#);
        assert_eq!(
            r.print_line,
            r#"print("agent: anything else?", "user: a restaurant in the same area as my hotel")"#
        );
        assert_eq!(r.update_line, "state.restaurant = update_restaurant(area=state.hotel.area)");
    }

    #[test]
    fn empty_delta_is_pass() {
        assert_eq!(render_example(&example(StateChange::new())).update_line, "pass");
    }

    #[test]
    fn arguments_are_sorted() {
        let d = StateChange::new()
            .with(sn("hotel-stars"), SlotValue::Literal("4".into()))
            .with(sn("hotel-parking"), SlotValue::Literal("yes".into()));
        let line = canonicalize_completion(&d);
        assert_eq!(line, r#"state.hotel = update_hotel(parking="yes", stars="4")"#);
        assert_eq!(parse_completion(&line, &schema()), ParseOutcome::Parsed(d));
    }

    #[test]
    fn removal_and_dontcare_render() {
        let d = StateChange::new()
            .with(sn("hotel-area"), SlotValue::DontCare)
            .without(sn("hotel-stars"))
            .with(sn("restaurant-area"), SlotValue::Literal("north".into()));
        assert_eq!(
            canonicalize_completion(&d),
            r#"state.hotel = update_hotel(area="dontcare", stars=None); state.restaurant = update_restaurant(area="north")"#
        );
    }

    #[test]
    fn stray_spacing_normalizes() {
        let ParseOutcome::Parsed(d) = parse_completion(
            "state.hotel   =  update_hotel( stars = 4 ,parking= True )",
            &schema(),
        ) else {
            panic!()
        };
        assert_eq!(
            canonicalize_completion(&d),
            r#"state.hotel = update_hotel(parking="yes", stars="4")"#
        );
    }

    #[test]
    fn prompt_layout() {
        let e1 = example(StateChange::new().with(sn("hotel-stars"), SlotValue::Literal("4".into())));
        let mut e2 = example(StateChange::new());
        e2.context.user_utt = "thanks".into();
        let query = TurnContext {
            prev_state: DialogueState::new(),
            agent_utt: String::new(),
            user_utt: "i need a hotel".into(),
        };
        let p = build_prompt(&schema(), &[&e1, &e2], &query);
        let header = render_task_definition(&schema());
        let expected = format!(
            "{header}\n\n{}\n\n{}\n\nstate = {{}}\nprint(\"user: i need a hotel\")\n",
            render_example(&e2).text(),
            render_example(&e1).text()
        );
        assert_eq!(p, expected);
    }

    #[test]
    fn zero_shot_uses_formatting_example() {
        let query = TurnContext::default();
        let p = build_prompt(&schema(), &[], &query);
        assert!(p.contains(&render_example(&formatting_example()).text()));
        let inv = build_inverted_prompt(&schema(), &[]);
        assert!(inv.contains(&render_example(&formatting_example()).inverted_text()));
        assert!(inv.ends_with("\n\n"));
    }

    #[test]
    fn inverted_permutes_parts() {
        let e = example(StateChange::new().with(sn("hotel-stars"), SlotValue::Literal("4".into())));
        let inv = build_inverted_prompt(&schema(), &[&e]);
        let r = render_example(&e);
        assert!(inv.ends_with(&format!("{}\n{}\n{}\n\n", r.update_line, r.state_line, r.print_line)));
    }

    #[test]
    fn utterance_newlines_are_escaped() {
        let line = render_print_line("", "one\n\ntwo");
        assert!(!line.contains('\n'));
    }
}
