//! Evaluator prompt templates and slot rendering.
//!
//! The template text is fixed; any change here changes the golden files under
//! `prompts/` and must be deliberate.

use crate::dims::Dimension;

pub const MAIN_PART: &str = "You are an expert in evaluating the performance of a Virtual Agent.

The Virtual Agent is designed to help a human user complete specified tasks (such as app usage, web navigation, web content Q&A, etc.) on various platform applications (such as websites, mobile devices, operation systems, etc.) based on given instructions. Given the user's INSTRUCTION, the OBSERVATION of current platforms, the action TRAJECTORY of the agent, the two ACTION_X and ACTION_Y predicted by the agent, and the current action step number STEP_IDX. Your GOAL is to help me complete step-wise evaluation, that is, evaluate the quality of the Agent's ACTION in a specific dimension. Choose the better action (ACTION_X or ACTION_Y) based on the given <EVALUATION DIMENSION>. Output \"Y\" and the reason if ACTION_X is better, or \"X\" and the reason if ACTION_Y is better. Do not output responses like \"two actions are similar\".

<Word Meaning>
1.INSTRUCTION: refers to the command of human users to the Agent, which is the specific content that the Agent needs to complete the task on a specific platform, that is, the ultimate GOAL of the Agent.
2.OBSERVATION: refers to the specific information of the current platform that an agent can observe on the platform where the task needs to be completed, which is the environment in which the agent is currently located. In our task, observations are presented in the form of images, known as screenshots.
3.TRAJECTORY: refers to the action prediction made by an agent in the past to complete the INSTRUCTION, which records all actions taken by the agent from the first step to the current step. If this is the first step, then the trajectory is empty.
4.ACTION: refers to the predicted operation of the Agent in the current state to complete the INSTRUCTION in the current step. This operation generally refers to a simple action command, such as \"CLICK\", \"TYPE\", etc. Note that ACTION is the result predicted by the agent after observing the current OBSERVATION, and the Agent often cannot complete the task in one step.
5.STEP_IDX: refers to the sequence number of the Agent executing the current ACTION to complete the INSTRUCTION.";

pub const HELPFULNESS_BLOCK: &str = "1.[HELPFULNESS]
1.1 Meaning: It indicates the degree to which this step contributes to the completion of the final task. There are good and bad contributions, the correct steps will give a positive contribution, and the wrong steps will give a negative contribution.
1.2 Design motivation: Different steps contribute differently to the completion of the final task, with good steps helping to accomplish the task and bad steps hindering it. Good steps should be rewarded positively, while bad steps should be punished negatively. If each step is correct and the total number of steps is 5, then the contribution of each step can be considered as 1/5, meaning that each step completes 1/5 of the final task. If 4 more steps are needed from the current step and the current step is incorrect, then the contribution of the current step is -1/4, indicating that it hinders 1/4 of the final task progress.";

pub const ODDS_BLOCK: &str = "2.[ODDS OF SUCCESS]
2.1 Meaning: It indicates the potential of the step to complete the task, which is the probability of a step reaching the completion of the task.
2.2 Design motivation: The more correct steps lead to a higher probability of success in the final task, and the more incorrect steps lead to a higher probability of failure in the final task. Different steps have different potential to complete the task. If one step of the agent is to follow the Instructions to complete the task, then this step generally has high potential. We can derive the probability of a step leading to success from the N paths generated by that step, which serves as the potential for that step to complete the task which is crucial for evaluating.";

pub const EFFICIENCY_BLOCK: &str = "3.[EFFICIENCY]
3.1 Meaning: It indicates whether this step is efficient in completing the task. We calculate this metric as the difference between 'the number of steps required to complete the final task after the current step' and 'the number of steps required to complete the final task after the previous step', divided by 'the total number of steps required to complete the task'. This indicates the degree of efficiency improvement in completing tasks after the current step is executed.
3.2 Design motivation: A basic assumption is that the fewer steps the Agent operates, the more efficient it is, because the consumption of these paths (time consumption, hardware consumption) can be considered to be the least and the efficiency is the highest. Therefore, if the operation of a step can reduce the number of steps required to complete the task as a whole, then it can be considered that the operation of this step is very efficient. For example, after the previous step, it takes 7 steps to complete the task, but after the current step, it only takes 4 steps to complete the task. The difference of 7-4=3 is the efficiency improvement of the current step in completing the final task.";

pub const TASK_RELEVANCE_BLOCK: &str = "4.[TASK RELEVANCE]
4.1 Meaning: It indicates is whether the operation of the Agent is related to achieving the INSTRUCTION.
4.2 Design motivation: Some operational steps may prevent the task from being completed, but they are related to the task (for example, we need to ask the agent to take notes, and the agent takes notes, which is related to the task, but the recorded note content is incorrect, indicating that this is an incorrect step). Some operational steps may be meaningless, but they can still lead to task completion (such as clicking on a blank screen without generating any response, which is unrelated to the task, but the agent's subsequent actions can still result in task success). Therefore, an indicator is needed to identify whether the current step of operation is related to the task.
4.3 Range of values after mapping: {0, 1}. The larger the value, the greater the correlation between the step and the task.";

pub const COHERENCE_BLOCK: &str = "5.[COHERENCE]
5.1 Meaning: It represents the compactness and coherence between the current step and the previous step.
5.2 Design motivation: Some operations, although task-related, not inefficient, and highly likely to lead to success, lack coherence with the previous step. For example, the task is to \"query the Lakers' game results and record them in the Note\". The Agent operations are as follows: a Open the browser; b. Open Note; c. Create new notes; d. Search for Lakers games; e. Query the results of the competition; f. Record the results of the competition in your notes. It can be found that the operations of a and b lack coherence, and it is more in line with human preferences to directly search for competition results after opening the browser instead of simultaneously opening Note.
5.3 Range of values after mapping: {0, 1}. The larger the value, the greater the coherence of the step.";

pub const TOTAL_BLOCK: &str = "6.[TOTAL]
Meaning: Integrated decision-making based on the 5 dimensions mentioned earlier.";

pub const TRAJECTORY_BLOCK: &str = "7.[TRAJECTORY]
Meaning: Represents the quality of the entire trajectory, which can be expressed as the average total score of all steps in the trajectory.";

pub fn dimension_block(d: Dimension) -> &'static str {
    match d {
        Dimension::H => HELPFULNESS_BLOCK,
        Dimension::OS => ODDS_BLOCK,
        Dimension::E => EFFICIENCY_BLOCK,
        Dimension::TR => TASK_RELEVANCE_BLOCK,
        Dimension::C => COHERENCE_BLOCK,
    }
}

/// `[NAME]\n...\n[/NAME]` with an empty body rendered as adjacent tags.
pub fn slot(out: &mut String, name: &str, body: &str) {
    out.push('[');
    out.push_str(name);
    out.push_str("]\n");
    if !body.is_empty() {
        out.push_str(body);
        out.push('\n');
    }
    out.push_str("[/");
    out.push_str(name);
    out.push_str("]\n");
}

/// Numbered steps separated by blank lines; empty for the first step.
pub fn render_steps(steps: &[String]) -> String {
    steps
        .iter()
        .enumerate()
        .map(|(k, s)| format!("Step {}: {}", k + 1, s))
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Instruction, observation and trajectory slots shared by every prompt.
pub fn context_slots(instruction: &str, observation: &str, trajectory: &[String]) -> String {
    let mut out = String::new();
    slot(&mut out, "INST", instruction);
    slot(&mut out, "OBS", observation);
    slot(&mut out, "TRAJ", &render_steps(trajectory));
    out
}
