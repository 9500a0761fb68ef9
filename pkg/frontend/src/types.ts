// API payload shapes, mirroring the session service's response models.
// The shared fixture under test/fixtures/ pins this schema on both sides.

export interface CandidateInfo {
  object_id: number;
  ig_value: number | null;
}

export interface QuestionInfo {
  target_object_id: number;
  question_text: string;
}

export interface ObjectSummary {
  object_id: number;
  class_name: string;
  color: string;
  x: number;
  y: number;
  map_concept: number;
  answer_entropy: number;
  answer: string | null;
  is_candidate: boolean;
}

export interface StepMetric {
  trial: number;
  step: number;
  strategy: string;
  selected_object: number | null;
  ig_value: number | null;
  question_text: string | null;
  answer: string | null;
  ari: number;
  n_questions: number;
}

export interface StateSnapshot {
  session_id: string;
  scenario: string;
  users: string[];
  step: number;
  completed: boolean;
  candidates: CandidateInfo[];
  question: QuestionInfo | null;
  objects: ObjectSummary[];
  history: StepMetric[];
}

export interface SessionHandle {
  session_id: string;
  scenario: string;
  created_at: string;
  step: number;
  candidates: number[];
}

export interface ApiErrorBody {
  code: string;
  message: string;
  detail: string | null;
}
