//! Static bearer tokens mapped to roles.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Doctor,
    Admin,
}

/// What a route requires from the caller.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Access {
    Public,
    /// Doctors and admins.
    Clinical,
    AdminOnly,
}

impl Access {
    pub fn permits(self, role: Role) -> bool {
        match self {
            Access::Public | Access::Clinical => true,
            Access::AdminOnly => role == Role::Admin,
        }
    }
}

/// Token file contents: `{"<token>": "doctor" | "admin", ...}`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenTable(BTreeMap<String, Role>);

impl TokenTable {
    pub fn new(entries: impl IntoIterator<Item = (String, Role)>) -> Self {
        Self(entries.into_iter().collect())
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn role(&self, token: &str) -> Option<Role> {
        self.0.get(token).copied()
    }
}

/// Extracts the token from an `Authorization: Bearer <token>` value.
pub fn bearer(header: &str) -> Option<&str> {
    let (scheme, token) = header.trim().split_once(' ')?;
    scheme.eq_ignore_ascii_case("bearer").then(|| token.trim()).filter(|t| !t.is_empty())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_bearer_headers() {
        assert_eq!(bearer("Bearer abc"), Some("abc"));
        assert_eq!(bearer("bearer  abc "), Some("abc"));
        assert_eq!(bearer("Basic abc"), None);
        assert_eq!(bearer("Bearer"), None);
    }

    #[test]
    fn role_matrix() {
        assert!(Access::Clinical.permits(Role::Doctor));
        assert!(!Access::AdminOnly.permits(Role::Doctor));
        assert!(Access::AdminOnly.permits(Role::Admin));
        let t = TokenTable::from_json(r#"{"d": "doctor", "a": "admin"}"#).unwrap();
        assert_eq!(t.role("d"), Some(Role::Doctor));
        assert_eq!(t.role("x"), None);
        assert!(TokenTable::from_json(r#"{"d": "nurse"}"#).is_err());
    }
}
