const INTERROGATIVE_LEADS: &[&str] = &[
    "what", "who", "whom", "whose", "where", "when", "why", "which", "how", "do", "does", "did",
    "is", "are", "was", "were", "can", "could", "will", "would", "have", "has",
];

const WH_WORDS: &[&str] = &[
    "what", "who", "whom", "whose", "where", "when", "why", "which", "how",
];

const SUBJECTS: &[&str] = &["you", "i", "we", "they", "he", "she", "it", "there", "that"];

pub fn is_interrogative_lead(token: &str) -> bool {
    INTERROGATIVE_LEADS.contains(&token)
}

/// Capitalizes the first character and appends `?` after an interrogative
/// lead, `.` otherwise. Text that already ends in terminal punctuation is
/// only capitalized, which makes the function idempotent.
pub fn restore_punctuation(raw_text: &str) -> String {
    let trimmed = raw_text.trim();
    if trimmed.is_empty() {
        return String::new();
    }
    let mut chars = trimmed.chars();
    let first = chars.next().expect("non-empty");
    let mut out: String = first.to_uppercase().collect();
    out.push_str(chars.as_str());
    if out.ends_with(['?', '.', '!']) {
        return out;
    }
    let lead = trimmed
        .split_whitespace()
        .next()
        .unwrap_or("")
        .trim_matches(|c: char| !c.is_alphanumeric() && c != '\'')
        .to_lowercase();
    out.push(if is_interrogative_lead(&lead) { '?' } else { '.' });
    out
}

/// True when some clause of the utterance opens like a question: a wh-word,
/// or an auxiliary followed by a subject pronoun ("do you", "have you").
/// Catches questions behind discourse prefixes such as "yes thats true ...".
pub fn has_question_clause(raw_text: &str) -> bool {
    let tokens: Vec<&str> = raw_text.split_whitespace().collect();
    tokens.iter().enumerate().any(|(i, tok)| {
        if i == 0 && is_interrogative_lead(tok) {
            return true;
        }
        if WH_WORDS.contains(tok) {
            return true;
        }
        is_interrogative_lead(tok)
            && tokens
                .get(i + 1)
                .is_some_and(|next| SUBJECTS.contains(next))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn question_and_statement() {
        assert_eq!(restore_punctuation("do you like sports"), "Do you like sports?");
        assert_eq!(restore_punctuation("i like sports"), "I like sports.");
        assert_eq!(restore_punctuation(""), "");
        assert_eq!(restore_punctuation("what is neymars age"), "What is neymars age?");
    }

    #[test]
    fn idempotent() {
        for s in ["do you like sports", "i like sports", "x", "has it rained"] {
            let once = restore_punctuation(s);
            assert_eq!(restore_punctuation(&once), once);
        }
    }

    #[test]
    fn question_clause() {
        assert!(has_question_clause(
            "yes thats true they both are very good do you know what is neymars age"
        ));
        assert!(has_question_clause("what is neymars age"));
        assert!(!has_question_clause("i like movies"));
        assert!(!has_question_clause("its pretty much the same"));
    }
}
