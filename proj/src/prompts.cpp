#include "appjudge/prompts.hpp"

namespace appjudge::prompts {

const std::string_view kCaseGeneration =
    R"(You are a professional test engineer. Please generate a series of specific test cases based on the following user requirements for the webpage.

Requirements:
1. Test cases must be generated entirely around user requirements, absolutely not missing any user requirements
2. Please return all test cases in Python list format
3. When generating test cases, consider both whether the corresponding module is displayed on the webpage and whether the corresponding function is working properly. You need to generate methods to verify webpage functionality based on your knowledge.
4. Please do not implement test cases that require other device assistance for verification.
5. Please control the number of test cases to [min_cases]~[max_cases], focusing only on the main functionalities mentioned in the user requirements. Do not generate test cases that are not directly related to the user requirements.
6. When generating test cases, focus on functional testing, not UI testing.

[Test Case Examples]

User Requirements: [demand]

Please return the test case list in List(str) format, without any additional characters, as the result will be converted using the eval function.)";

const std::string_view kTestJudgement =
    R"(The model results are labeled as ground truth. Please judge whether the described test case has been successfully implemented based on the facts. If there is evidence that it has been implemented, just output "Yes", otherwise output "No". If the model results indicate that the outcome cannot be determined, output "Uncertain":

Test Case Description: [task_desc]

Model Result: [model_output]

Only answer with "Yes", "No", or "Uncertain")";

const std::string_view kTestExecution =
    R"(You are a professional and responsible web testing engineer (with real operation capabilities). I will provide you with a test task list, and you need to provide test results for all test tasks. If you fail to complete the test tasks, it may cause significant losses to the client. Please maintain the test tasks and their results in a task list. For test cases of a project, you must conduct thorough testing with at least five steps or more - the more tests, the more reliable the results.

[IMPORTANT]: You must test ALL test cases before providing your final report! Do not skip any test cases or fabricate results without actual testing! Failing to complete the entire task list will result in invalid test results and significant client losses.

Task Tips:

Standard Operating Procedure (SOP):
1. Determine test plan based on tasks and screenshots
2. Execute test plan for each test case systematically - verify each case in the task list one by one
3. After completing each test case, you can use Tell action to report that individual test case result
4. After completing ALL test case evaluations, use Tell action to report the COMPLETE results in the specified format

Reporting Language: Answer in natural English using structured format (like dictionaries). Tell me your judgment basis and results. You need to report the completion status of each condition in the task and your basis for determining whether it's complete.

Note that you're seeing only part of the app(or webpage) on screen. If you can't find modules mentioned in the task (especially when the right scroll bar shows you're at the top), try using pagedown to view the complete app(or webpage).)";

const std::string_view kTestExecutionReport =
    R"(Inspection Standards:
1. Test cases are considered Pass if implemented on any page (not necessarily homepage). Please patiently review all pages (including scrolling down, clicking buttons to explore) before ending testing. You must understand relationships between pages - the first page you see is the target app's homepage.
2. If images in tested app(or webpage) modules aren't displaying correctly, that test case fails.
3. You may switch to other pages on the app(or webpage) during testing. On these pages, just confirm the test case result - don't mark other pages-passed cases as Fail if subpages lack features. Return to homepage after judging each case.
4. Trust your operations completely. If expected results don't appear after an operation, that function isn't implemented - report judgment as False.
5. If target module isn't found after complete app(or webpage) browsing, test case result is negative, citing "target module not found on any page" as basis.
6. Don't judge functionality solely by element attributes (clickable etc.) or text ("Filter by category" etc.). You must perform corresponding tests before outputting case results.
7. When tasks require operations for judgment, you must execute those operations. Final results can't have cases with unknown results due to lack of operations (clicks, inputs etc.).
8. For similar test cases (e.g., checking different social media links), if you verify one link works, you can assume others work normally.

For each individual test case completion, you can use Tell action to report just that result:

Tell ({"case_number": {"result": "Pass/Fail/Uncertain", "evidence": "Your evidence here"}})

Even in these failure cases, you must perform sufficient testing steps to prove your judgment before using the Tell action to report all results.

[VERIFICATION REQUIRED]: Before submitting your final report, verify that:
1. You have tested EVERY test case in the task list
2. Each test case has an explicit result (Pass/Fail/Uncertain)
3. Each result has supporting evidence based on your actual testing

Final Result Format (must include ALL test cases):

{
    "0": {"result": "Pass", "evidence": "The thumbnail click functionality is working correctly. When clicking on 'Digital Artwork 1' thumbnail, it successfully redirects to a properly formatted detail page containing the artwork's title, image, description, creation process, sharing options, and comments section."},
    "1": {"result": "Uncertain", "evidence": "Cannot verify price calculation accuracy as no pricing information is displayed"},
    "2": {"result": "Fail", "evidence": "After fully browsing and exploring the web page, I did not find the message board appearing on the homepage or any subpage."}
}

**Return only the result string. Do not include any additional text, markdown formatting, or code blocks.**)";

const std::string_view kCodeQuality =
    R"(To perform a comprehensive evaluation of the provided code, focus on a meticulous and step-by-step assessment using the established Software Evaluation Framework, aiming to yield minimal assessment scores based on rigorous real-world high standards.

# Software Evaluation Framework
## Evaluation Criteria
1. Implementation
    - Modularity: Code should be organized into logical, reusable components
    - Architecture: Clear separation of concerns and appropriate design patterns
    - Reusability: Components should be designed for potential reuse
2. Functionality
    - Core Features: All specified features must be fully implemented
    - Interactivity: Dynamic user interactions vs static implementations
    - User Experience: Intuitive and responsive interface
    - Error Handling: Comprehensive error management
    - State Management: Proper handling of application state
3. Logical Flow
    - Control Flow: Clear and efficient program execution paths
    - Data Flow: Proper data transformation and management
    - Event Handling: Appropriate response to system and user events
    - Asynchronous Operations: Proper handling of async processes
    - State Transitions: Clear and predictable state changes
4. Edge Cases
    - Input Validation: Handling of invalid or unexpected inputs
    - Boundary Conditions: Managing edge values and limits
    - Resource Management: Handling resource exhaustion scenarios
5. Requirement Dependencies
    - Feature Dependencies: Proper implementation of dependent features
    - External Services: Correct integration with external services
    - Database Schema: Proper database relationships and constraints

## Quality Metrics and Weightings
### Core Quality Dimensions (Total: 100 points)

1. Functional Correctness (25 points)
2. User Experience (25 points)
3. Maintainability (20 points)
4. Reliability & Stability (20 points)
5. Security & Data Protection (10 points)

# Query
{query}

# Requirements
{features}

# Code
{codes}

# Output Format
Output the evaluation results as a list of Boolean values and corresponding scores in JSON format.
```
[
    {
        "requirement_id": "Task Id",
        "satisfied": boolean, true or false, satisfies the requirement or not.
        "score": int, 0 ~ 100, the minimal evaluation score based on the high standards.
        "reason": "string, the detailed explanation of the evaluation in 3~5 sentences."
    },
]
```
## Examples
{example}

# Output
)";

const std::string_view kDefaultVisualRubric =
    R"(You are reviewing screenshots of a web application built for the request below. Rate its visual presentation on a 0-100 scale, considering layout and alignment, visual hierarchy, typography, color harmony, consistency across pages, and whether content renders without broken images or overlapping elements. Be strict: 50 is an acceptable but unremarkable page, 80 or more requires a polished, professional result.

Request:
{query}

Reply with a single integer between 0 and 100 and nothing else.)";

std::string fill_template(std::string_view tmpl,
                          const std::vector<std::pair<std::string, std::string>>& values) {
  std::string out;
  out.reserve(tmpl.size());
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    std::size_t best = std::string_view::npos;
    const std::pair<std::string, std::string>* hit = nullptr;
    for (const auto& kv : values) {
      if (kv.first.empty()) continue;
      const auto at = tmpl.find(kv.first, pos);
      if (at < best) {
        best = at;
        hit = &kv;
      }
    }
    if (hit == nullptr) {
      out.append(tmpl.substr(pos));
      break;
    }
    out.append(tmpl.substr(pos, best - pos));
    out.append(hit->second);
    pos = best + hit->first.size();
  }
  return out;
}

}  // namespace appjudge::prompts
