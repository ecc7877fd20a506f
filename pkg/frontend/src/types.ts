/** Wire types mirroring the suggestion service API. */

export interface PendingItem {
  pair_id: string;
  image_id: string;
  suggestion_id: string;
  presented_text: string;
  tokens: number[];
  stub_label: number;
  confidence: number;
  topic_id: number;
  features: number[];
}

export interface PendingResponse {
  generation: number;
  items: PendingItem[];
  remaining: number;
}

export interface AnnotationResult {
  pair_id: string;
  final_label: number;
  status: string;
}

export type Label = 0 | 1;
