/**
 * Keyboard-only navigation: a focus ring over the interactive controls
 * (Tab / Shift+Tab / Enter), so the edit-and-rate path needs no pointer.
 */

export interface FocusItem {
  id: string;
  activate: () => void | Promise<void>;
}

export class FocusRing {
  private items: FocusItem[] = [];
  index = 0;

  setItems(items: FocusItem[]): void {
    this.items = items;
    this.index = 0;
  }

  ids(): string[] {
    return this.items.map((i) => i.id);
  }

  current(): FocusItem | undefined {
    return this.items[this.index];
  }

  next(): FocusItem | undefined {
    if (this.items.length === 0) return undefined;
    this.index = (this.index + 1) % this.items.length;
    return this.current();
  }

  prev(): FocusItem | undefined {
    if (this.items.length === 0) return undefined;
    this.index = (this.index - 1 + this.items.length) % this.items.length;
    return this.current();
  }

  async handleKey(key: string, shift = false): Promise<string | null> {
    if (key === "Tab") {
      const item = shift ? this.prev() : this.next();
      return item ? item.id : null;
    }
    if (key === "Enter") {
      const item = this.current();
      if (item) {
        await item.activate();
        return item.id;
      }
    }
    return null;
  }
}
