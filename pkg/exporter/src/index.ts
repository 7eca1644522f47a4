export {
  DTYPE_BF16,
  DTYPE_F32,
  FormatError,
  bf16ToF32,
  f32BitsToBf16,
  readEmbeddings,
  readHead,
  validateHead,
  writeEmbeddings,
  writeHead,
  writeIdMap,
  writeQueryTokens,
} from "./formats.js";
export type { EmbeddingFile, HeadLayer, HeadParams } from "./formats.js";
export { Checkpoint, CheckpointError, loadCheckpoint, saveCheckpoint } from "./safetensors.js";
export type { TensorEntry } from "./safetensors.js";
export { TokenizerError, WordPieceTokenizer } from "./tokenizer.js";
export type { Encoded } from "./tokenizer.js";
export { Encoder, readEncoderConfig } from "./encoder.js";
export type { EncoderConfig } from "./encoder.js";
export { LayoutError, defaultMappingPath, extractHead, loadMapping } from "./mapping.js";
export type { MappingTable } from "./mapping.js";
export { generateLayer, generateQNet, qnetForward, LAYER_NORM_EPS } from "./reference.js";
export type { QNetLayer } from "./reference.js";
export { exportDocEmbeddings, exportHyperhead, exportQueryTokens } from "./export.js";
export type { ExportCounts, ExportJob } from "./export.js";
