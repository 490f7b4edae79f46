/**
 * DOM wiring. Everything here reads state from the session/editor/trace
 * models and re-renders; all decisions live in those modules.
 */

import { FileEditor, OpenFile, SaveConflictError } from "./editor.js";
import { GatewayClient, SocketLike } from "./protocol.js";
import { renderConversations, renderDirectory, renderFileList,
         renderTraceGroups, highlightSource } from "./render.js";
import { ConsoleSession, SELF_TARGET } from "./session.js";
import { TraceLog } from "./trace.js";

const RUNLEVEL_BUTTONS = ["n-1", "n-3", "n-5", "n-6!"] as const;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

function gatewayUrl(): string {
  const params = new URLSearchParams(window.location.search);
  const given = params.get("gateway");
  if (given) {
    return given.startsWith("ws") ? given : `ws://${given}/gateway`;
  }
  return `ws://${window.location.host}/gateway`;
}

function boot(): void {
  const socket = new WebSocket(gatewayUrl()) as unknown as SocketLike;
  const client = new GatewayClient(socket);
  const session = new ConsoleSession(client);
  const editor = new FileEditor(client);
  const trace = new TraceLog();

  let target = SELF_TARGET;
  let openFile: OpenFile | null = null;
  let openFileNames: string[] = [];

  const log = el<HTMLDivElement>("conversations");
  const directory = el<HTMLUListElement>("directory");
  const badge = el<HTMLSpanElement>("runlevel-badge");
  const command = el<HTMLTextAreaElement>("command");
  const status = el<HTMLDivElement>("status");
  const tracePane = el<HTMLDivElement>("trace");
  const fileList = el<HTMLUListElement>("files");
  const fileText = el<HTMLTextAreaElement>("file-text");
  const highlighted = el<HTMLPreElement>("file-highlight");
  const syncPane = el<HTMLDivElement>("sync-pane");
  const syncCommand = el<HTMLInputElement>("sync-command");
  const syncOut = el<HTMLPreElement>("sync-output");

  const note = (text: string) => {
    status.textContent = text;
  };

  const redrawShell = () => {
    log.innerHTML = renderConversations(session.conversations);
    log.scrollTop = log.scrollHeight;
    command.disabled = !session.inputEnabled;
    if (!session.inputEnabled) {
      note("connection lost");
    }
  };

  const redrawDirectory = () => {
    directory.innerHTML = renderDirectory(session.directory, target);
    el<HTMLSpanElement>("attached").textContent = session.agentName || "?";
  };

  const redrawFiles = () => {
    fileList.innerHTML = renderFileList(openFileNames, openFile?.name ?? null);
    highlighted.innerHTML = highlightSource(fileText.value);
  };

  // --- agent management tab ------------------------------------------------

  directory.addEventListener("click", (event) => {
    const agent = (event.target as HTMLElement).dataset["agent"];
    if (agent) {
      target = agent;
      redrawDirectory();
    }
  });

  const execute = () => {
    const text = command.value.trim();
    if (!text || !session.inputEnabled) {
      return;
    }
    command.value = "";
    session.sendAsync(target, text);
    redrawShell();
  };

  el<HTMLButtonElement>("execute").addEventListener("click", execute);
  command.addEventListener("keydown", (event) => {
    if (event.key === "Enter" && event.shiftKey && event.ctrlKey) {
      event.preventDefault();
      execute();
    }
  });

  for (const button of RUNLEVEL_BUTTONS) {
    el<HTMLButtonElement>(`runlevel-${button.replace("!", "")}`)
      .addEventListener("click", () => {
        session.setRunlevel(button).then(
          (text) => {
            badge.textContent = text;
            note(`runlevel ${button} applied`);
          },
          (error: unknown) => note(String(error)),
        );
      });
  }

  el<HTMLButtonElement>("refresh-agents").addEventListener("click", () => {
    session.refreshDirectory().then(redrawDirectory, (e: unknown) =>
      note(String(e)));
  });

  // --- rule engine management tab -------------------------------------------

  const loadFileList = () => {
    editor.listFiles().then((names) => {
      openFileNames = names;
      redrawFiles();
    }, (e: unknown) => note(String(e)));
  };

  fileList.addEventListener("click", (event) => {
    const name = (event.target as HTMLElement).dataset["file"];
    if (!name) {
      return;
    }
    editor.open(name).then((file) => {
      openFile = file;
      fileText.value = file.text;
      redrawFiles();
      note(file.baseline === null
        ? `${name} does not exist yet; saving will create it`
        : `${name} opened`);
    }, (e: unknown) => note(String(e)));
  });

  el<HTMLButtonElement>("open-new").addEventListener("click", () => {
    const name = window.prompt("file name (.rbs or .clp-mini)");
    if (!name) {
      return;
    }
    editor.open(name).then((file) => {
      openFile = file;
      fileText.value = file.text;
      redrawFiles();
    }, (e: unknown) => note(String(e)));
  });

  const save = (overwrite: boolean) => {
    if (!openFile) {
      note("no file open");
      return;
    }
    openFile.text = fileText.value;
    editor.save(openFile, { overwrite }).then(
      (bytes) => {
        note(`${openFile?.name}: ${bytes} bytes saved`);
        loadFileList();
      },
      (error: unknown) => {
        if (error instanceof SaveConflictError && !overwrite) {
          if (window.confirm(`${error.fileName} changed on disk — overwrite?`)) {
            save(true);
          } else {
            note("save cancelled; file changed on disk");
          }
          return;
        }
        note(String(error));
      },
    );
  };
  el<HTMLButtonElement>("save-file").addEventListener("click", () => save(false));
  fileText.addEventListener("input", () => {
    highlighted.innerHTML = highlightSource(fileText.value);
  });

  el<HTMLInputElement>("dev-toggle").addEventListener("change", (event) => {
    syncPane.hidden = !(event.target as HTMLInputElement).checked;
  });
  el<HTMLButtonElement>("sync-run").addEventListener("click", () => {
    session.execSync(syncCommand.value).then(
      (output) => {
        syncOut.textContent = output;
      },
      (error: unknown) => {
        syncOut.textContent = String(error);
      },
    );
  });

  // --- tabs, events, boot ---------------------------------------------------

  for (const name of ["agents-tab", "engine-tab"]) {
    el<HTMLButtonElement>(`show-${name}`).addEventListener("click", () => {
      el<HTMLDivElement>("agents-tab").hidden = name !== "agents-tab";
      el<HTMLDivElement>("engine-tab").hidden = name !== "engine-tab";
    });
  }

  client.onExec(() => redrawShell());
  client.onClose(() => redrawShell());
  trace.onChange(() => {
    tracePane.innerHTML = renderTraceGroups(trace.grouped());
  });

  session.refreshDirectory().then(() => {
    redrawDirectory();
    note(`connected to ${session.agentName}`);
  }, (e: unknown) => note(String(e)));
  trace.attach(client).catch((e: unknown) => note(String(e)));
  loadFileList();
  setInterval(redrawShell, 250); // catch group adoption renames
}

boot();
