//! Category conventions. Behaviour is keyed off the last word of the
//! category string, so "green bin" is a container and "catapult button" a
//! button.

pub const DEFAULT_STATE: &str = "default";

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Kind {
    Container,
    Button { target: String },
    Handle { parent: String },
    Catapult,
    Plain,
}

impl Kind {
    pub fn is_container(&self) -> bool {
        matches!(self, Kind::Container)
    }
}

fn last_word(category: &str) -> &str {
    category.rsplit(' ').next().unwrap_or(category)
}

fn head(category: &str) -> String {
    category
        .rsplit_once(' ')
        .map(|(h, _)| h.to_string())
        .unwrap_or_default()
}

pub fn kind(category: &str) -> Kind {
    match last_word(category) {
        "drawer" | "bin" | "bowl" => Kind::Container,
        "button" => Kind::Button {
            target: head(category),
        },
        "handle" => Kind::Handle {
            parent: head(category),
        },
        "catapult" => Kind::Catapult,
        _ => Kind::Plain,
    }
}

/// Valid states, first entry is the default.
pub fn states(category: &str) -> &'static [&'static str] {
    match last_word(category) {
        "drawer" => &["closed", "open"],
        "catapult" => &["not triggered", "triggered"],
        _ => &[DEFAULT_STATE],
    }
}

pub fn default_state(category: &str) -> &'static str {
    states(category)[0]
}

/// Strips a trailing instance number from a node label.
pub fn category_of_label(label: &str) -> &str {
    match label.rsplit_once(' ') {
        Some((cat, n)) if !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit()) => cat,
        _ => label,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kinds_from_last_word() {
        assert_eq!(kind("green bin"), Kind::Container);
        assert_eq!(
            kind("catapult button"),
            Kind::Button {
                target: "catapult".into()
            }
        );
        assert_eq!(
            kind("drawer handle"),
            Kind::Handle {
                parent: "drawer".into()
            }
        );
        assert_eq!(kind("red block"), Kind::Plain);
    }

    #[test]
    fn state_lists() {
        assert_eq!(states("drawer"), &["closed", "open"]);
        assert_eq!(states("catapult"), &["not triggered", "triggered"]);
        assert_eq!(states("red block"), &[DEFAULT_STATE]);
    }

    #[test]
    fn label_category() {
        assert_eq!(category_of_label("red block 2"), "red block");
        assert_eq!(category_of_label("red block"), "red block");
    }
}
