/**
 * WordPiece tokenizer compatible with the common BERT vocabularies: basic
 * lowercasing tokenization (whitespace split, punctuation split off as
 * single-character tokens), then greedy longest-match subword segmentation
 * with "##" continuation pieces.
 */

import * as fs from "node:fs";

export class TokenizerError extends Error {}

export interface Encoded {
  /** Vocabulary ids including the leading [CLS] and trailing [SEP]. */
  ids: number[];
  tokens: string[];
}

function isPunctuation(ch: string): boolean {
  const code = ch.codePointAt(0) ?? 0;
  if (
    (code >= 33 && code <= 47) ||
    (code >= 58 && code <= 64) ||
    (code >= 91 && code <= 96) ||
    (code >= 123 && code <= 126)
  ) {
    return true;
  }
  return /\p{P}/u.test(ch);
}

export class WordPieceTokenizer {
  private readonly vocab: Map<string, number>;
  readonly clsId: number;
  readonly sepId: number;
  readonly unkId: number;
  private readonly maxWordChars = 100;

  constructor(vocabTokens: string[]) {
    this.vocab = new Map();
    vocabTokens.forEach((token, i) => {
      if (token.length > 0 && !this.vocab.has(token)) {
        this.vocab.set(token, i);
      }
    });
    for (const special of ["[CLS]", "[SEP]", "[UNK]"]) {
      if (!this.vocab.has(special)) {
        throw new TokenizerError(`vocabulary is missing ${special}`);
      }
    }
    this.clsId = this.vocab.get("[CLS]")!;
    this.sepId = this.vocab.get("[SEP]")!;
    this.unkId = this.vocab.get("[UNK]")!;
  }

  static fromFile(vocabPath: string): WordPieceTokenizer {
    const text = fs.readFileSync(vocabPath, "utf-8");
    return new WordPieceTokenizer(text.split("\n").map((l) => l.replace(/\r$/, "")));
  }

  /** Lowercase and split into words and single punctuation characters. */
  basicTokenize(text: string): string[] {
    const out: string[] = [];
    let word = "";
    const flush = () => {
      if (word.length > 0) {
        out.push(word);
        word = "";
      }
    };
    for (const ch of text.toLowerCase()) {
      if (/\s/.test(ch)) {
        flush();
      } else if (isPunctuation(ch)) {
        flush();
        out.push(ch);
      } else {
        word += ch;
      }
    }
    flush();
    return out;
  }

  /** Greedy longest-match segmentation of one word; [UNK] if unmatchable. */
  wordPiece(word: string): string[] {
    if (word.length > this.maxWordChars) {
      return ["[UNK]"];
    }
    const pieces: string[] = [];
    let start = 0;
    while (start < word.length) {
      let end = word.length;
      let piece: string | null = null;
      while (start < end) {
        const candidate = (start > 0 ? "##" : "") + word.slice(start, end);
        if (this.vocab.has(candidate)) {
          piece = candidate;
          break;
        }
        end -= 1;
      }
      if (piece === null) {
        return ["[UNK]"];
      }
      pieces.push(piece);
      start = end;
    }
    return pieces;
  }

  /**
   * Full encoding: [CLS] pieces... [SEP], truncated so the result is at
   * most maxLen ids (the [SEP] is always kept).
   */
  encode(text: string, maxLen = 512): Encoded {
    if (maxLen < 3) {
      throw new TokenizerError(`maxLen ${maxLen} leaves no room for content`);
    }
    const tokens: string[] = ["[CLS]"];
    for (const word of this.basicTokenize(text)) {
      tokens.push(...this.wordPiece(word));
      if (tokens.length >= maxLen - 1) {
        tokens.length = maxLen - 1;
        break;
      }
    }
    tokens.push("[SEP]");
    const ids = tokens.map((t) => this.vocab.get(t) ?? this.unkId);
    return { ids, tokens };
  }
}
