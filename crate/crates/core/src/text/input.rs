use crate::error::{Error, Result};

use super::vocab::Vocab;

/// `[CLS] prompt [SEP] text [SEP]` followed by `[PAD]` up to `max_len`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TextInput {
    pub ids: Vec<usize>,
    pub mask: Vec<bool>,
    pub prompt_len: usize,
    pub text_len: usize,
}

impl TextInput {
    /// `m + n + 3`
    pub fn unpadded_len(&self) -> usize {
        self.prompt_len + self.text_len + 3
    }

    pub fn max_len(&self) -> usize {
        self.ids.len()
    }

    /// Rows holding the prompt (after `[CLS]`).
    pub fn prompt_range(&self) -> std::ops::Range<usize> {
        1..1 + self.prompt_len
    }
}

/// Truncates the text from the right when the layout exceeds `max_len`;
/// the prompt is never cut.
pub fn assemble_text_input(prompt: &[usize], text: &[usize], max_len: usize) -> Result<TextInput> {
    let m = prompt.len();
    if m + 3 > max_len {
        return Err(Error::PromptTooLong {
            prompt_len: m,
            max_len,
        });
    }
    let n = text.len().min(max_len - m - 3);
    let mut ids = Vec::with_capacity(max_len);
    ids.push(Vocab::CLS_ID);
    ids.extend_from_slice(prompt);
    ids.push(Vocab::SEP_ID);
    ids.extend_from_slice(&text[..n]);
    ids.push(Vocab::SEP_ID);
    let used = ids.len();
    ids.resize(max_len, Vocab::PAD_ID);
    let mask = (0..max_len).map(|i| i < used).collect();
    Ok(TextInput {
        ids,
        mask,
        prompt_len: m,
        text_len: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_and_length() {
        let prompt: Vec<usize> = (10..17).collect();
        let text: Vec<usize> = (20..25).collect();
        let inp = assemble_text_input(&prompt, &text, 32).unwrap();
        assert_eq!(inp.unpadded_len(), 15);
        assert_eq!(inp.mask.iter().filter(|&&m| m).count(), 15);
        assert_eq!(inp.ids[0], Vocab::CLS_ID);
        assert_eq!(inp.ids[8], Vocab::SEP_ID);
        assert_eq!(inp.ids[14], Vocab::SEP_ID);
        assert_eq!(inp.ids[15], Vocab::PAD_ID);
    }

    #[test]
    fn empty_text() {
        let inp = assemble_text_input(&[7, 8], &[], 8).unwrap();
        assert_eq!(
            &inp.ids[..5],
            &[Vocab::CLS_ID, 7, 8, Vocab::SEP_ID, Vocab::SEP_ID]
        );
        assert_eq!(inp.unpadded_len(), 5);
    }

    #[test]
    fn text_truncated_not_prompt() {
        let prompt: Vec<usize> = (10..17).collect();
        let text: Vec<usize> = (100..200).collect();
        let inp = assemble_text_input(&prompt, &text, 32).unwrap();
        assert_eq!(inp.text_len, 32 - 7 - 3);
        assert_eq!(inp.prompt_len, 7);
        assert_eq!(inp.ids[31], Vocab::SEP_ID);
        assert_eq!(inp.ids[30], 121);
    }

    #[test]
    fn no_prompt_layout() {
        let inp = assemble_text_input(&[], &[5, 6, 7], 10).unwrap();
        assert_eq!(inp.unpadded_len(), 6);
        assert_eq!(
            &inp.ids[..6],
            &[Vocab::CLS_ID, Vocab::SEP_ID, 5, 6, 7, Vocab::SEP_ID]
        );
    }

    #[test]
    fn oversized_prompt_rejected() {
        assert!(matches!(
            assemble_text_input(&[1; 6], &[], 8),
            Err(Error::PromptTooLong { .. })
        ));
    }

    proptest! {
        #[test]
        fn unpadded_length_identity(m in 0usize..10, n in 0usize..40, extra in 0usize..30) {
            let max_len = m + 3 + extra;
            let inp = assemble_text_input(&vec![9; m], &vec![11; n], max_len).unwrap();
            prop_assert_eq!(inp.unpadded_len(), m + inp.text_len + 3);
            prop_assert_eq!(inp.text_len, n.min(extra));
            prop_assert_eq!(inp.ids.len(), max_len);
            for (id, keep) in inp.ids.iter().zip(&inp.mask) {
                prop_assert_eq!(*keep, *id != Vocab::PAD_ID);
            }
        }
    }
}
