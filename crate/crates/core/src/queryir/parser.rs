use crate::catalog::{AttributeKind, GlobalSchema};
use crate::value::{Comparator, Predicate, Value};

use super::lexer::{syntax, tokenize, Token, TokenKind};
use super::{AnalyticalQuery, Pattern, QueryError, QueryErrorKind};

/// Parses query text and type-checks it against the schema.
pub fn parse(text: &str, schema: &GlobalSchema) -> Result<AnalyticalQuery, QueryError> {
    let tokens = tokenize(text)?;
    Parser {
        tokens,
        pos: 0,
        schema,
    }
    .query()
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    schema: &'a GlobalSchema,
}

fn error_at(tok: &Token, kind: QueryErrorKind, message: impl Into<String>) -> QueryError {
    QueryError::Parse {
        kind,
        line: tok.line,
        column: tok.column,
        message: message.into(),
    }
}

fn describe(kind: &TokenKind) -> String {
    match kind {
        TokenKind::Word(w) => format!("{w:?}"),
        TokenKind::Str(s) => format!("string '{s}'"),
        TokenKind::Number(n) => format!("number {n}"),
        TokenKind::Op(op) => format!("{:?}", op.symbol()),
        TokenKind::Comma => "\",\"".into(),
        TokenKind::Eof => "end of input".into(),
    }
}

impl Parser<'_> {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn next(&mut self) -> Token {
        let tok = self.tokens[self.pos].clone();
        if !matches!(tok.kind, TokenKind::Eof) {
            self.pos += 1;
        }
        tok
    }

    fn at_keyword(&self, kw: &str) -> bool {
        matches!(&self.peek().kind, TokenKind::Word(w) if w.eq_ignore_ascii_case(kw))
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<(), QueryError> {
        if self.at_keyword(kw) {
            self.next();
            Ok(())
        } else {
            let tok = self.peek();
            Err(syntax(
                tok.line,
                tok.column,
                format!("expected {kw}, found {}", describe(&tok.kind)),
            ))
        }
    }

    fn reject_disjunction(&self) -> Result<(), QueryError> {
        if self.at_keyword("or") || self.at_keyword("not") {
            return Err(error_at(
                self.peek(),
                QueryErrorKind::Unsupported,
                "OR and NOT are not supported; filters are conjunctions of terms",
            ));
        }
        Ok(())
    }

    fn query(&mut self) -> Result<AnalyticalQuery, QueryError> {
        let head = self.next();
        let word = match &head.kind {
            TokenKind::Word(w) => w.to_ascii_uppercase(),
            other => {
                return Err(syntax(
                    head.line,
                    head.column,
                    format!("expected SELECT, TREE or PREDICT, found {}", describe(other)),
                ))
            }
        };
        let mut query = match word.as_str() {
            "SELECT" => AnalyticalQuery {
                pattern: Pattern::Retrieve,
                filter: Vec::new(),
                target: None,
                group_by: Vec::new(),
            },
            "TREE" => {
                let target = self.categorical_attribute("tree target")?;
                self.expect_keyword("by")?;
                let mut group_by = vec![self.categorical_attribute("grouping attribute")?];
                while matches!(self.peek().kind, TokenKind::Comma) {
                    self.next();
                    group_by.push(self.categorical_attribute("grouping attribute")?);
                }
                let mut seen = vec![target.1.clone()];
                for (tok, g) in group_by.iter() {
                    if seen.contains(g) {
                        return Err(error_at(
                            tok,
                            QueryErrorKind::Syntax,
                            format!("attribute {g} appears twice in TREE clause"),
                        ));
                    }
                    seen.push(g.clone());
                }
                AnalyticalQuery {
                    pattern: Pattern::TreeInsight,
                    filter: Vec::new(),
                    target: Some(target.1),
                    group_by: group_by.into_iter().map(|(_, g)| g).collect(),
                }
            }
            "PREDICT" => {
                let tok = self.next();
                let pattern = match &tok.kind {
                    TokenKind::Word(w) => Pattern::from_predict_keyword(w),
                    _ => None,
                }
                .ok_or_else(|| {
                    error_at(
                        &tok,
                        QueryErrorKind::UnknownPattern,
                        format!(
                            "unknown prediction pattern {}; expected treatment, ae_caused, ae_risk or ae_type",
                            describe(&tok.kind)
                        ),
                    )
                })?;
                let target = pattern.target_attribute().unwrap_or_default();
                if self.schema.attribute(target).is_none() {
                    return Err(error_at(
                        &tok,
                        QueryErrorKind::UnknownAttribute,
                        format!("schema has no attribute {target} required by PREDICT {}", pattern.slug()),
                    ));
                }
                AnalyticalQuery {
                    pattern,
                    filter: Vec::new(),
                    target: Some(target.to_string()),
                    group_by: Vec::new(),
                }
            }
            _ => {
                return Err(error_at(
                    &head,
                    QueryErrorKind::UnknownPattern,
                    format!("unknown query keyword {word}; expected SELECT, TREE or PREDICT"),
                ))
            }
        };

        self.reject_disjunction()?;
        if self.at_keyword("where") {
            self.next();
            query.filter.push(self.term(query.pattern)?);
            loop {
                self.reject_disjunction()?;
                if !self.at_keyword("and") {
                    break;
                }
                self.next();
                query.filter.push(self.term(query.pattern)?);
            }
        }
        let tok = self.peek();
        if !matches!(tok.kind, TokenKind::Eof) {
            return Err(syntax(
                tok.line,
                tok.column,
                format!("unexpected {}", describe(&tok.kind)),
            ));
        }
        Ok(query)
    }

    fn identifier(&mut self, what: &str) -> Result<(Token, String), QueryError> {
        let tok = self.next();
        match &tok.kind {
            TokenKind::Word(w) => {
                let w = w.clone();
                Ok((tok, w))
            }
            other => Err(syntax(
                tok.line,
                tok.column,
                format!("expected {what}, found {}", describe(other)),
            )),
        }
    }

    fn categorical_attribute(&mut self, what: &str) -> Result<(Token, String), QueryError> {
        let (tok, name) = self.identifier(what)?;
        match self.schema.attribute(&name) {
            None => Err(error_at(
                &tok,
                QueryErrorKind::UnknownAttribute,
                format!("unknown attribute {name}"),
            )),
            Some(def) if def.kind != AttributeKind::Categorical => Err(error_at(
                &tok,
                QueryErrorKind::TypeMismatch,
                format!("{what} {name} must be categorical"),
            )),
            Some(_) => Ok((tok, name)),
        }
    }

    fn term(&mut self, pattern: Pattern) -> Result<Predicate, QueryError> {
        self.reject_disjunction()?;
        let (attr_tok, name) = self.identifier("attribute name")?;
        let def = self.schema.attribute(&name).ok_or_else(|| {
            error_at(
                &attr_tok,
                QueryErrorKind::UnknownAttribute,
                format!("unknown attribute {name}"),
            )
        })?;
        let op_tok = self.next();
        let op = match op_tok.kind {
            TokenKind::Op(op) => op,
            ref other => {
                return Err(syntax(
                    op_tok.line,
                    op_tok.column,
                    format!("expected comparator after {name}, found {}", describe(other)),
                ))
            }
        };
        let lit = self.next();
        let mismatch = |msg: String| error_at(&lit, QueryErrorKind::TypeMismatch, msg);
        let value = match (&lit.kind, def.kind) {
            (TokenKind::Str(s), AttributeKind::Categorical) => {
                if op.is_ordering() {
                    return Err(error_at(
                        &op_tok,
                        QueryErrorKind::TypeMismatch,
                        format!("comparator {op} is not allowed on categorical attribute {name}"),
                    ));
                }
                if def.vocabulary_index(s).is_none() {
                    return Err(mismatch(format!("'{s}' is not in the vocabulary of {name}")));
                }
                Value::Text(s.clone())
            }
            (TokenKind::Number(n), AttributeKind::NumericInteger) => {
                if n.contains('.') {
                    return Err(mismatch(format!("{name} is an integer attribute, got {n}")));
                }
                Value::Int(
                    n.parse()
                        .map_err(|_| mismatch(format!("integer literal {n} out of range")))?,
                )
            }
            (TokenKind::Number(n), AttributeKind::NumericReal) => Value::Real(
                n.parse()
                    .map_err(|_| mismatch(format!("bad numeric literal {n}")))?,
            ),
            (TokenKind::Str(s), _) => {
                return Err(mismatch(format!("{name} is numeric, got string '{s}'")))
            }
            (TokenKind::Number(n), AttributeKind::Categorical) => {
                return Err(mismatch(format!("{name} is categorical, got number {n}")))
            }
            (other, _) => {
                return Err(syntax(
                    lit.line,
                    lit.column,
                    format!("expected literal, found {}", describe(other)),
                ))
            }
        };
        if pattern.is_prediction() {
            if !pattern.feature_attributes().contains(&name.as_str()) {
                return Err(error_at(
                    &attr_tok,
                    QueryErrorKind::Unsupported,
                    format!("{name} is not an input of PREDICT {}", pattern.slug()),
                ));
            }
            if op != Comparator::Eq {
                return Err(error_at(
                    &op_tok,
                    QueryErrorKind::Unsupported,
                    "prediction inputs must be equality terms",
                ));
            }
        }
        Ok(Predicate {
            attribute: name,
            op,
            value,
        })
    }
}
