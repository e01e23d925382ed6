/**
 * Five-point rating: one submission per generation round, disabled after.
 */

import type { SessionClient } from "./client.js";

export class RatingWidget {
  value: number | null = null;
  submitted = false;
  submissions = 0;

  constructor(
    private client: SessionClient,
    private sessionId: string,
  ) {}

  select(value: number): void {
    if (this.submitted) return;
    if (!Number.isInteger(value) || value < 1 || value > 5) {
      throw new Error(`rating ${value} outside 1..5`);
    }
    this.value = value;
  }

  get disabled(): boolean {
    return this.submitted;
  }

  async submit(): Promise<boolean> {
    if (this.submitted || this.value === null) return false;
    await this.client.submitRating(this.sessionId, this.value);
    this.submitted = true;
    this.submissions += 1;
    return true;
  }

  /** New generation round: rating becomes available again. */
  reset(): void {
    this.value = null;
    this.submitted = false;
  }

  /** Keys "1".."5" select, "Enter" submits; everything else is ignored. */
  async handleKey(key: string): Promise<boolean> {
    if (/^[1-5]$/.test(key)) {
      this.select(Number(key));
      return false;
    }
    if (key === "Enter") return this.submit();
    return false;
  }
}
