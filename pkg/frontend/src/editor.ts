/**
 * The rule/behavior file editor backend: list, open, and save the agent's
 * editable files through GET_FILE/PUT_FILE, with a conflict check so two
 * editors (or an agent-side rewrite) can't silently clobber each other.
 */

import { GatewayClient, GatewayError } from "./protocol.js";

export interface OpenFile {
  name: string;
  text: string;
  /** File content at open/last-save time; null if the file didn't exist. */
  baseline: string | null;
}

export class SaveConflictError extends Error {
  constructor(readonly fileName: string, readonly diskText: string) {
    super(`${fileName} changed on disk; save with overwrite to replace it`);
    this.name = "SaveConflictError";
  }
}

function isMissingFile(error: unknown): boolean {
  return (
    error instanceof GatewayError &&
    error.code === "PATH_ERROR" &&
    error.detail.includes("no such file")
  );
}

export class FileEditor {
  constructor(private readonly client: GatewayClient) {}

  async listFiles(): Promise<string[]> {
    const body = await this.client.request<{ files: string[] }>(
      "GET_FILE", null, {});
    return body.files;
  }

  /** Opening a file that doesn't exist yet gives an empty create-on-save buffer. */
  async open(name: string): Promise<OpenFile> {
    const disk = await this.diskText(name);
    return disk === null
      ? { name, text: "", baseline: null }
      : { name, text: disk, baseline: disk };
  }

  /**
   * Save the buffer. Unless overwriting, the file must still match what the
   * editor last saw; anything else raises SaveConflictError carrying the
   * current disk text so the UI can show it.
   */
  async save(file: OpenFile, options: { overwrite?: boolean } = {}): Promise<number> {
    if (!options.overwrite) {
      const disk = await this.diskText(file.name);
      if (disk !== null && disk !== file.baseline) {
        throw new SaveConflictError(file.name, disk);
      }
    }
    const body = await this.client.request<{ bytes: number }>(
      "PUT_FILE", null, { name: file.name, text: file.text });
    file.baseline = file.text;
    return body.bytes;
  }

  private async diskText(name: string): Promise<string | null> {
    try {
      const body = await this.client.request<{ text: string }>(
        "GET_FILE", null, { name });
      return body.text;
    } catch (error) {
      if (isMissingFile(error)) {
        return null;
      }
      throw error;
    }
  }
}
