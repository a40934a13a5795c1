// Typed client for the grading service's JSON API. Every request goes
// through one code path so auth, error mapping, and the grade-retry
// contract live in a single place.

export interface QuestionRegion {
  question_id: string;
  order: number;
  page_index: number;
  x0: number;
  y0: number;
  x1: number;
  y1: number;
  text: string;
  question_type: string;
  confirmed: boolean;
}

export interface ExamSummary {
  exam_id: string;
  name: string;
  grading_open: boolean;
  questions_version: number;
  questions: QuestionRegion[];
  assigned_questions?: string[];
}

export interface Mapping {
  bundle_id: string;
  roll_candidate: string;
  name_candidate: string;
  matched_roll: string | null;
  matched_name: string;
  edit_distance: number;
  status: "auto" | "manual" | "unmapped";
}

export interface KeywordEntry {
  question_id: string;
  keywords: string[];
  max_score: number;
  rubric: string;
}

export interface ServedResponse {
  bundle_id: string;
  question_id: string;
  crop_url: string;
  whole_page_url: string;
  rubric: string;
  max_score: number;
}

export interface GradeResult {
  bundle_id: string;
  question_id: string;
  score: number;
  max_score: number;
  status: string;
}

export interface GradeSubmission {
  bundle_id: string;
  question_id: string;
  score: number;
  regrade?: boolean;
}

export interface SubmitOutcome {
  result: GradeResult | null;
  // True when the grade had to be confirmed through the retry path: the
  // first response was lost but the server had consumed the serve.
  recovered: boolean;
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
    this.name = "ApiError";
  }
}

async function errorDetail(response: Response): Promise<string> {
  try {
    const body = await response.json();
    if (body && typeof body.detail === "string") return body.detail;
  } catch {
    // non-JSON error body; fall through
  }
  return `request failed with status ${response.status}`;
}

export class Client {
  constructor(
    private token: string,
    private fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async request(
    method: string,
    path: string,
    body?: unknown,
  ): Promise<unknown> {
    const init: RequestInit = {
      method,
      headers: {
        Authorization: `Bearer ${this.token}`,
        ...(body !== undefined ? { "Content-Type": "application/json" } : {}),
      },
    };
    if (body !== undefined) init.body = JSON.stringify(body);
    const response = await this.fetchFn(path, init);
    if (response.status === 204) return null;
    if (!response.ok) {
      throw new ApiError(response.status, await errorDetail(response));
    }
    return response.json();
  }

  listExams(): Promise<{ exams: { exam_id: string; name: string }[] }> {
    return this.request("GET", "/exams") as Promise<{
      exams: { exam_id: string; name: string }[];
    }>;
  }

  getExam(examId: string): Promise<ExamSummary> {
    return this.request("GET", `/exams/${examId}`) as Promise<ExamSummary>;
  }

  getQuestions(
    examId: string,
  ): Promise<{ version: number; questions: QuestionRegion[] }> {
    return this.request("GET", `/exams/${examId}/questions`) as Promise<{
      version: number;
      questions: QuestionRegion[];
    }>;
  }

  putQuestions(
    examId: string,
    baseVersion: number,
    questions: QuestionRegion[],
  ): Promise<{ version: number }> {
    return this.request("PUT", `/exams/${examId}/questions`, {
      base_version: baseVersion,
      questions,
    }) as Promise<{ version: number }>;
  }

  confirmQuestions(examId: string): Promise<{ version: number }> {
    return this.request(
      "POST",
      `/exams/${examId}/questions/confirm`,
    ) as Promise<{ version: number }>;
  }

  getMappings(examId: string): Promise<{ mappings: Mapping[] }> {
    return this.request("GET", `/exams/${examId}/mappings`) as Promise<{
      mappings: Mapping[];
    }>;
  }

  putMapping(
    examId: string,
    bundleId: string,
    roll: string | null,
  ): Promise<{ bundle_id: string; matched_roll: string | null; status: string }> {
    return this.request("PUT", `/exams/${examId}/mappings`, {
      bundle_id: bundleId,
      roll,
    }) as Promise<{
      bundle_id: string;
      matched_roll: string | null;
      status: string;
    }>;
  }

  getKeywords(examId: string): Promise<{ keywords: KeywordEntry[] }> {
    return this.request("GET", `/exams/${examId}/keywords`) as Promise<{
      keywords: KeywordEntry[];
    }>;
  }

  putKeywords(examId: string, entries: KeywordEntry[]): Promise<unknown> {
    return this.request("PUT", `/exams/${examId}/keywords`, entries);
  }

  openGrading(examId: string): Promise<unknown> {
    return this.request("POST", `/exams/${examId}/open`);
  }

  getReport(examId: string, sheetTrim = "sheet"): Promise<ReportPayload> {
    return this.request(
      "GET",
      `/exams/${examId}/report?sheet_trim=${sheetTrim}`,
    ) as Promise<ReportPayload>;
  }

  // The grader's serve. 204 (empty queue) comes back as null.
  nextSubmission(
    examId: string,
    questionId: string,
  ): Promise<ServedResponse | null> {
    return this.request(
      "GET",
      `/exams/${examId}/next?question=${encodeURIComponent(questionId)}`,
    ) as Promise<ServedResponse | null>;
  }

  /**
   * Submit one grade with double-submit protection.
   *
   * The server consumes the serve when it records a grade, so a lost
   * response is recoverable: retry once, and a 409 on that retry means
   * the first attempt was recorded. A 409 on the first attempt is a
   * real error (nothing was served) and is thrown unchanged.
   */
  async submitGrade(
    examId: string,
    grade: GradeSubmission,
  ): Promise<SubmitOutcome> {
    const path = `/exams/${examId}/grades`;
    const body = {
      bundle_id: grade.bundle_id,
      question_id: grade.question_id,
      score: grade.score,
      regrade: grade.regrade ?? false,
    };
    try {
      const result = (await this.request("POST", path, body)) as GradeResult;
      return { result, recovered: false };
    } catch (err) {
      if (err instanceof ApiError) throw err;
      // Network failure: the request may or may not have reached the
      // server. Exactly one retry; never loop.
      try {
        const result = (await this.request("POST", path, body)) as GradeResult;
        return { result, recovered: false };
      } catch (retryErr) {
        if (retryErr instanceof ApiError && retryErr.status === 409) {
          return { result: null, recovered: true };
        }
        throw retryErr;
      }
    }
  }
}

export interface ReportPayload {
  per_question: {
    question_id: string;
    type: string;
    mean_hna_ms: number | null;
    mean_h_ms: number | null;
    n_hna: number;
    n_h: number;
    n_nh: number;
    reduction_pct: number | null;
  }[];
  per_sheet: {
    split: string;
    mean_sheet_ms: number | null;
    n: number;
    partial: number;
  }[];
  summary: {
    avg_reduction_per_response_pct: number | null;
    avg_reduction_per_sheet_pct: number | null;
    per_type_reduction_pct: Record<string, number | null>;
  };
}
