export {
  BridgeClient,
  BridgeError,
  SessionHandle,
  base64ToFloats,
  floatsToBase64,
  type BridgeClientOptions,
  type BridgeErrorCode,
  type ProcessResult,
  type SpecialTokens,
} from "./client.js";
