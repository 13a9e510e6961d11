//! Parser for LM completions in the update-call language.
//!
//! ```text
//! program   := stmt ((NEWLINE | ';') stmt)*
//! stmt      := 'pass' | 'state' '.' DOMAIN '=' CALLNAME '(' [arg (',' arg)* [',']] ')'
//! arg       := SLOT '=' value
//! value     := STRING | INT | True | False | None | 'state' '.' DOMAIN '.' SLOT
//! ```
//!
//! Strings take single or double quotes; `"dontcare"` is the don't-care
//! value, `True`/`False` become `yes`/`no`, `None` removes the slot. A slot
//! assigned twice keeps its last value. Any input yields an outcome; the
//! parser never panics.

use serde::{Deserialize, Serialize};

use crate::schema::CanonicalSchema;
use crate::state::{SlotName, SlotValue, StateChange};

/// Stop sequences passed to the LM and re-applied to what comes back.
pub const STOP_SEQUENCES: [&str; 3] = ["\n\n", "#", "print("];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    Syntax,
    UnknownDomain,
    UnknownSlot,
    BadValue,
    BadReference,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseOutcome {
    Parsed(StateChange),
    Rejected {
        reason: RejectReason,
        /// Byte range of the offending input.
        span: (usize, usize),
    },
}

impl ParseOutcome {
    pub fn delta(&self) -> Option<&StateChange> {
        match self {
            ParseOutcome::Parsed(d) => Some(d),
            ParseOutcome::Rejected { .. } => None,
        }
    }

    pub fn is_rejected(&self) -> bool {
        matches!(self, ParseOutcome::Rejected { .. })
    }
}

/// Truncates `text` at the earliest occurrence of any stop sequence.
pub fn strip_at_stops<'a>(text: &'a str, stops: &[&str]) -> &'a str {
    let cut = stops
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| text.find(s))
        .min()
        .unwrap_or(text.len());
    &text[..cut]
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Str(String),
    Int(String),
    Dot,
    Eq,
    Comma,
    LParen,
    RParen,
    Sep,
}

type Spanned = (Tok, usize, usize);

struct Reject(RejectReason, usize, usize);

fn lex(text: &str) -> Result<Vec<Spanned>, Reject> {
    let mut out = Vec::new();
    let mut chars = text.char_indices().peekable();
    while let Some(&(start, c)) = chars.peek() {
        match c {
            '\n' | ';' => {
                chars.next();
                out.push((Tok::Sep, start, start + 1));
            }
            c if c.is_whitespace() => {
                chars.next();
            }
            '.' | '=' | ',' | '(' | ')' => {
                chars.next();
                let tok = match c {
                    '.' => Tok::Dot,
                    '=' => Tok::Eq,
                    ',' => Tok::Comma,
                    '(' => Tok::LParen,
                    _ => Tok::RParen,
                };
                out.push((tok, start, start + 1));
            }
            '"' | '\'' => {
                chars.next();
                let quote = c;
                let mut s = String::new();
                let mut closed = None;
                while let Some((i, ch)) = chars.next() {
                    match ch {
                        '\\' => match chars.next() {
                            Some((_, 'n')) => s.push('\n'),
                            Some((_, 't')) => s.push('\t'),
                            Some((_, other)) => s.push(other),
                            None => break,
                        },
                        ch if ch == quote => {
                            closed = Some(i + 1);
                            break;
                        }
                        ch => s.push(ch),
                    }
                }
                match closed {
                    Some(end) => out.push((Tok::Str(s), start, end)),
                    None => return Err(Reject(RejectReason::Syntax, start, text.len())),
                }
            }
            c if c.is_ascii_digit() => {
                let mut s = String::new();
                let mut end = start;
                while let Some(&(i, d)) = chars.peek() {
                    if d.is_ascii_digit() {
                        s.push(d);
                        end = i + 1;
                        chars.next();
                    } else {
                        break;
                    }
                }
                out.push((Tok::Int(s), start, end));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut s = String::new();
                let mut end = start;
                while let Some(&(i, d)) = chars.peek() {
                    if d.is_ascii_alphanumeric() || d == '_' {
                        s.push(d);
                        end = i + 1;
                        chars.next();
                    } else {
                        break;
                    }
                }
                out.push((Tok::Ident(s), start, end));
            }
            _ => return Err(Reject(RejectReason::Syntax, start, start + c.len_utf8())),
        }
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<Spanned>,
    pos: usize,
    schema: &'a CanonicalSchema,
    end: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.0)
    }

    fn span_here(&self) -> (usize, usize) {
        self.toks
            .get(self.pos)
            .map(|t| (t.1, t.2))
            .unwrap_or((self.end, self.end))
    }

    fn next(&mut self) -> Option<Spanned> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn syntax(&self) -> Reject {
        let (s, e) = self.span_here();
        Reject(RejectReason::Syntax, s, e)
    }

    fn expect(&mut self, want: Tok) -> Result<(), Reject> {
        if self.peek() == Some(&want) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.syntax())
        }
    }

    fn ident(&mut self) -> Result<(String, usize, usize), Reject> {
        match self.next() {
            Some((Tok::Ident(s), a, b)) => Ok((s, a, b)),
            _ => {
                self.pos -= 1;
                Err(self.syntax())
            }
        }
    }

    fn program(&mut self) -> Result<StateChange, Reject> {
        let mut delta = StateChange::new();
        loop {
            while self.peek() == Some(&Tok::Sep) {
                self.pos += 1;
            }
            if self.peek().is_none() {
                return Ok(delta);
            }
            self.statement(&mut delta)?;
            match self.peek() {
                None => return Ok(delta),
                Some(Tok::Sep) => {}
                Some(_) => return Err(self.syntax()),
            }
        }
    }

    fn statement(&mut self, delta: &mut StateChange) -> Result<(), Reject> {
        let (head, _, _) = self.ident()?;
        match head.as_str() {
            "pass" => Ok(()),
            "state" => {
                self.expect(Tok::Dot)?;
                let (domain, ds, de) = self.ident()?;
                if self.schema.domain(&domain).is_none() {
                    return Err(Reject(RejectReason::UnknownDomain, ds, de));
                }
                self.expect(Tok::Eq)?;
                let (call, cs, ce) = self.ident()?;
                if !call.bytes().all(|b| b.is_ascii_lowercase() || b == b'_') {
                    return Err(Reject(RejectReason::Syntax, cs, ce));
                }
                self.expect(Tok::LParen)?;
                loop {
                    if self.peek() == Some(&Tok::RParen) {
                        self.pos += 1;
                        return Ok(());
                    }
                    self.argument(&domain, delta)?;
                    match self.peek() {
                        Some(Tok::Comma) => self.pos += 1,
                        Some(Tok::RParen) => {}
                        _ => return Err(self.syntax()),
                    }
                }
            }
            _ => {
                self.pos -= 1;
                Err(self.syntax())
            }
        }
    }

    fn argument(&mut self, domain: &str, delta: &mut StateChange) -> Result<(), Reject> {
        let (slot, ss, se) = self.ident()?;
        let name = SlotName::new(domain, &slot)
            .ok()
            .filter(|n| self.schema.contains(n))
            .ok_or(Reject(RejectReason::UnknownSlot, ss, se))?;
        self.expect(Tok::Eq)?;
        let (tok, vs, ve) = self.next().ok_or_else(|| self.syntax())?;
        match tok {
            Tok::Str(s) => {
                let v = SlotValue::literal(s).map_err(|_| Reject(RejectReason::BadValue, vs, ve))?;
                delta.set(name, v);
            }
            Tok::Int(s) => delta.set(name, SlotValue::Literal(s)),
            Tok::Ident(word) => match word.as_str() {
                "True" | "true" => delta.set(name, SlotValue::Literal("yes".into())),
                "False" | "false" => delta.set(name, SlotValue::Literal("no".into())),
                "None" => delta.remove(name),
                "state" => {
                    self.expect(Tok::Dot)?;
                    let (rd, rs, _) = self.ident()?;
                    self.expect(Tok::Dot)?;
                    let (rslot, _, re) = self.ident()?;
                    let target = SlotName::new(&rd, &rslot)
                        .ok()
                        .filter(|t| self.schema.contains(t))
                        .ok_or(Reject(RejectReason::BadReference, rs, re))?;
                    delta.set(name, SlotValue::Reference(target));
                }
                _ => return Err(Reject(RejectReason::BadValue, vs, ve)),
            },
            _ => return Err(Reject(RejectReason::Syntax, vs, ve)),
        }
        Ok(())
    }
}

/// Parses a completion into a state change against `schema`.
pub fn parse_completion(text: &str, schema: &CanonicalSchema) -> ParseOutcome {
    let result = lex(text).and_then(|toks| {
        Parser {
            toks,
            pos: 0,
            schema,
            end: text.len(),
        }
        .program()
    });
    match result {
        Ok(delta) => ParseOutcome::Parsed(delta),
        Err(Reject(reason, a, b)) => ParseOutcome::Rejected { reason, span: (a, b) },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> CanonicalSchema {
        CanonicalSchema::from_json(
            r#"{"domains":[
            {"name":"hotel","slots":[{"name":"area","kind":"text"},{"name":"stars","kind":"integer"},
                                     {"name":"parking","kind":"boolean"},{"name":"name","kind":"text"}]},
            {"name":"restaurant","slots":[{"name":"area","kind":"text"},{"name":"food","kind":"text"}]}]}"#,
        )
        .unwrap()
    }

    fn sn(s: &str) -> SlotName {
        s.parse().unwrap()
    }

    fn parsed(text: &str) -> StateChange {
        match parse_completion(text, &schema()) {
            ParseOutcome::Parsed(d) => d,
            other => panic!("{text:?} -> {other:?}"),
        }
    }

    fn reason(text: &str) -> RejectReason {
        match parse_completion(text, &schema()) {
            ParseOutcome::Rejected { reason, .. } => reason,
            other => panic!("{text:?} -> {other:?}"),
        }
    }

    #[test]
    fn coreference_call() {
        let d = parsed("state.restaurant = find_restaurant(area = state.hotel.area)");
        assert_eq!(
            d,
            StateChange::new().with(sn("restaurant-area"), SlotValue::Reference(sn("hotel-area")))
        );
    }

    #[test]
    fn pass_is_empty() {
        assert!(parsed("pass").is_empty());
        assert!(parsed("").is_empty());
        assert!(parsed("pass; pass\n").is_empty());
    }

    #[test]
    fn integers_and_booleans() {
        let d = parsed("state.hotel = update_hotel(stars=4, parking=True)");
        assert_eq!(
            d,
            StateChange::new()
                .with(sn("hotel-stars"), SlotValue::Literal("4".into()))
                .with(sn("hotel-parking"), SlotValue::Literal("yes".into()))
        );
        let d = parsed("state.hotel = update_hotel(parking=false)");
        assert_eq!(d.updates()[&sn("hotel-parking")], SlotValue::Literal("no".into()));
    }

    #[test]
    fn none_dontcare_and_last_wins() {
        let d = parsed(
            "state.hotel = update_hotel(area='east', area=\"west\", stars=None, name='dontcare',)",
        );
        assert_eq!(
            d,
            StateChange::new()
                .with(sn("hotel-area"), SlotValue::Literal("west".into()))
                .with(sn("hotel-name"), SlotValue::DontCare)
                .without(sn("hotel-stars"))
        );
    }

    #[test]
    fn several_statements() {
        let d = parsed(
            "state.hotel = update_hotel(area=\"east\")\nstate.restaurant = update_restaurant(food=\"thai\")",
        );
        assert_eq!(d.updates().len(), 2);
        let d = parsed("state.hotel = update_hotel(area=\"east\"); state.hotel = update_hotel(area=None)");
        assert_eq!(d.removals().len(), 1);
        assert!(d.updates().is_empty());
    }

    #[test]
    fn escapes() {
        let d = parsed(r#"state.hotel = update_hotel(name="the \"acorn\"\\ inn")"#);
        assert_eq!(
            d.updates()[&sn("hotel-name")],
            SlotValue::Literal(r#"the "acorn"\ inn"#.into())
        );
    }

    #[test]
    fn rejections() {
        assert_eq!(reason("state.spa = update_spa(area='x')"), RejectReason::UnknownDomain);
        assert_eq!(reason("state.hotel = update_hotel(pool='x')"), RejectReason::UnknownSlot);
        assert_eq!(reason("state.hotel = update_hotel(area=cheap)"), RejectReason::BadValue);
        assert_eq!(reason("state.hotel = update_hotel(area='')"), RejectReason::BadValue);
        assert_eq!(
            reason("state.hotel = update_hotel(area=state.spa.area)"),
            RejectReason::BadReference
        );
        assert_eq!(reason("state.hotel = update_hotel(area='x'"), RejectReason::Syntax);
        assert_eq!(reason("state.hotel = Update(area='x')"), RejectReason::Syntax);
        assert_eq!(reason("state.hotel = update_hotel(area='x"), RejectReason::Syntax);
        assert_eq!(reason("x = 1"), RejectReason::Syntax);
        assert_eq!(reason("pass pass"), RejectReason::Syntax);
    }

    #[test]
    fn spans_point_at_the_problem() {
        let text = "state.hotel = update_hotel(pool='x')";
        match parse_completion(text, &schema()) {
            ParseOutcome::Rejected { span, .. } => assert_eq!(&text[span.0..span.1], "pool"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn stops() {
        assert_eq!(strip_at_stops("pass\n\n# next", &STOP_SEQUENCES), "pass");
        assert_eq!(strip_at_stops("pass", &STOP_SEQUENCES), "pass");
        assert_eq!(strip_at_stops("a#b", &STOP_SEQUENCES), "a");
        assert_eq!(strip_at_stops("x\nprint(\"y\")", &STOP_SEQUENCES), "x\n");
    }
}
