/** Side-by-side judgment collection with per-card blinding.
 *
 * Each comparison shows system A and system B in a randomized left/right
 * order; judgments are recorded relative to system A regardless of the
 * blinding, and the running score is (good - bad) / total.
 */

export interface ComparisonCard {
  id: string;
  imageLabel: string;
  /** suggestion lists in display order */
  left: string[];
  right: string[];
  /** true when system B is displayed on the left */
  flipped: boolean;
}

export type ShownJudgment = "left" | "same" | "right";

export interface GsbCounts {
  good: number;
  same: number;
  bad: number;
}

export function makeCard(
  id: string,
  imageLabel: string,
  systemA: string[],
  systemB: string[],
  random: () => number = Math.random,
): ComparisonCard {
  const flipped = random() < 0.5;
  return {
    id,
    imageLabel,
    left: flipped ? systemB : systemA,
    right: flipped ? systemA : systemB,
    flipped,
  };
}

export class GsbTally {
  good = 0;
  same = 0;
  bad = 0;

  /** Record one judgment of the displayed card ("left" = the left list won). */
  judge(card: Pick<ComparisonCard, "flipped">, shown: ShownJudgment): void {
    if (shown === "same") {
      this.same += 1;
      return;
    }
    const aWon = (shown === "left") !== card.flipped;
    if (aWon) {
      this.good += 1;
    } else {
      this.bad += 1;
    }
  }

  get counts(): GsbCounts {
    return { good: this.good, same: this.same, bad: this.bad };
  }

  get total(): number {
    return this.good + this.same + this.bad;
  }

  /** (good - bad) / (good + same + bad); null before any judgment. */
  get score(): number | null {
    return this.total === 0 ? null : (this.good - this.bad) / this.total;
  }
}
